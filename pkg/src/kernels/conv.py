"""
Direct space-time convolution and pooling primitives on B x T x Y x X x C arrays.

Every primitive uses SAME padding and accumulates over kernel offsets in a
fixed (t, y, x) order, so results are reproducible bit for bit at a given
dtype. Backward passes return exact gradients of the forward map.
"""
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from src.errors import ShapeError

Triple = Tuple[int, int, int]


def same_padding(size: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """Returns (pad_before, pad_after, output_size) for SAME padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return before, total - before, out


def _pad(x: np.ndarray, kernel: Triple, strides: Triple, value: float = 0.0):
    pads: List[Tuple[int, int]] = [(0, 0)]
    out_shape = []
    for axis, (k, s) in enumerate(zip(kernel, strides)):
        before, after, out = same_padding(x.shape[axis + 1], k, s)
        pads.append((before, after))
        out_shape.append(out)
    pads.append((0, 0))
    return np.pad(x, pads, constant_values=value), tuple(out_shape), pads


def _unpad(xpad: np.ndarray, pads, shape) -> np.ndarray:
    (_, _), (t0, _), (y0, _), (x0, _), (_, _) = pads
    return xpad[:, t0 : t0 + shape[1], y0 : y0 + shape[2], x0 : x0 + shape[3]]


def _window(xpad: np.ndarray, offset: Triple, out_shape: Sequence[int], strides: Triple) -> np.ndarray:
    l, h, w = offset
    (st, sy, sx), (to, yo, xo) = strides, out_shape
    return xpad[
        :,
        l : l + st * (to - 1) + 1 : st,
        h : h + sy * (yo - 1) + 1 : sy,
        w : w + sx * (xo - 1) + 1 : sx,
    ]


def _offsets(kernel: Triple) -> Iterator[Triple]:
    return np.ndindex(*kernel)


def _check_input(x: np.ndarray, name: str = "input"):
    if x.ndim != 5:
        raise ShapeError(f"{name} must be B x T x Y x X x C, got shape {x.shape}")


def conv3d(x: np.ndarray, w: np.ndarray, strides: Triple = (1, 1, 1)) -> np.ndarray:
    """
    Cross-correlation of x (B,T,Y,X,Cin) with w (L,H,W,Cin,Cout).

    Returns:
        Array of shape (B, ceil(T/st), ceil(Y/sy), ceil(X/sx), Cout).
    """
    _check_input(x)
    if w.ndim != 5 or w.shape[3] != x.shape[-1]:
        raise ShapeError(
            f"kernel shape {w.shape} does not match input channels Cin={x.shape[-1]}"
        )
    kernel = w.shape[:3]
    xpad, out_shape, _ = _pad(x, kernel, strides)
    out = np.zeros((x.shape[0],) + out_shape + (w.shape[4],), dtype=np.result_type(x, w))
    for offset in _offsets(kernel):
        out += _window(xpad, offset, out_shape, strides) @ w[offset]
    return out


def conv3d_backward(
    x: np.ndarray, w: np.ndarray, grad_out: np.ndarray, strides: Triple = (1, 1, 1)
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of conv3d with respect to its input and kernel."""
    kernel = w.shape[:3]
    xpad, out_shape, pads = _pad(x, kernel, strides)
    expected = (x.shape[0],) + out_shape + (w.shape[4],)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    grad_pad = np.zeros_like(xpad)
    grad_w = np.zeros_like(w)
    for offset in _offsets(kernel):
        window = _window(xpad, offset, out_shape, strides)
        grad_w[offset] = np.tensordot(window, grad_out, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
        _window(grad_pad, offset, out_shape, strides)[...] += grad_out @ w[offset].T
    return _unpad(grad_pad, pads, x.shape), grad_w


def depthwise_temporal(x: np.ndarray, k: np.ndarray, stride: int = 1) -> np.ndarray:
    """
    Per-channel temporal cross-correlation of x (B,T,Y,X,C) with k (C,L).
    """
    _check_input(x)
    if k.ndim != 2 or k.shape[0] != x.shape[-1]:
        raise ShapeError(f"temporal kernel shape {k.shape} does not match channels C={x.shape[-1]}")
    kernel, strides = (k.shape[1], 1, 1), (stride, 1, 1)
    xpad, out_shape, _ = _pad(x, kernel, strides)
    out = np.zeros((x.shape[0],) + out_shape + (x.shape[-1],), dtype=np.result_type(x, k))
    for l in range(k.shape[1]):
        out += _window(xpad, (l, 0, 0), out_shape, strides) * k[:, l]
    return out


def depthwise_temporal_backward(
    x: np.ndarray, k: np.ndarray, grad_out: np.ndarray, stride: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    kernel, strides = (k.shape[1], 1, 1), (stride, 1, 1)
    xpad, out_shape, pads = _pad(x, kernel, strides)
    expected = (x.shape[0],) + out_shape + (x.shape[-1],)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expected}")
    grad_pad = np.zeros_like(xpad)
    grad_k = np.zeros_like(k)
    for l in range(k.shape[1]):
        window = _window(xpad, (l, 0, 0), out_shape, strides)
        grad_k[:, l] = np.sum(window * grad_out, axis=(0, 1, 2, 3))
        _window(grad_pad, (l, 0, 0), out_shape, strides)[...] += grad_out * k[:, l]
    return _unpad(grad_pad, pads, x.shape), grad_k


def _pool_window(t_len: int, spatial_len: int) -> Triple:
    if t_len < 1 or spatial_len < 1:
        raise ValueError(f"pooling window must be positive, got t={t_len}, spatial={spatial_len}")
    return (t_len, spatial_len, spatial_len)


def _window_counts(shape, kernel: Triple, strides: Triple, dtype) -> np.ndarray:
    """Number of non-padding elements under each output window."""
    ones = np.ones((1,) + tuple(shape[1:4]) + (1,), dtype=dtype)
    onepad, out_shape, _ = _pad(ones, kernel, strides)
    counts = np.zeros((1,) + out_shape + (1,), dtype=dtype)
    for offset in _offsets(kernel):
        counts += _window(onepad, offset, out_shape, strides)
    return counts


def _max_pool_argmax(x: np.ndarray, kernel: Triple, strides: Triple):
    xpad, out_shape, pads = _pad(x, kernel, strides, value=-np.inf)
    out = np.full((x.shape[0],) + out_shape + (x.shape[-1],), -np.inf, dtype=x.dtype)
    arg = np.zeros(out.shape, dtype=np.int64)
    for index, offset in enumerate(_offsets(kernel)):
        window = _window(xpad, offset, out_shape, strides)
        # Strict comparison keeps the lowest flat index on ties.
        better = window > out
        out = np.where(better, window, out)
        arg = np.where(better, index, arg)
    return out, arg, out_shape, pads


def pool(
    x: np.ndarray, kind: str, t_len: int, spatial_len: int = 3, strides: Triple = (1, 1, 1)
) -> np.ndarray:
    """
    Max or average pooling with SAME padding.

    Max pooling treats padding as -inf; average pooling divides by the number
    of real (non-padding) elements in each window.
    """
    _check_input(x)
    kernel = _pool_window(t_len, spatial_len)
    if kind == "max":
        out, _, _, _ = _max_pool_argmax(x, kernel, strides)
        return out
    if kind == "avg":
        xpad, out_shape, _ = _pad(x, kernel, strides)
        total = np.zeros((x.shape[0],) + out_shape + (x.shape[-1],), dtype=x.dtype)
        for offset in _offsets(kernel):
            total += _window(xpad, offset, out_shape, strides)
        return total / _window_counts(x.shape, kernel, strides, x.dtype)
    raise ValueError(f"Unknown pooling kind: {kind}. Choose 'max' or 'avg'.")


def pool_backward(
    x: np.ndarray,
    grad_out: np.ndarray,
    kind: str,
    t_len: int,
    spatial_len: int = 3,
    strides: Triple = (1, 1, 1),
) -> np.ndarray:
    """Gradient of pool with respect to its input; max routes to the argmax position."""
    kernel = _pool_window(t_len, spatial_len)
    if kind == "max":
        _, arg, out_shape, pads = _max_pool_argmax(x, kernel, strides)
        grad_pad = np.zeros(tuple(s + b + a for s, (b, a) in zip(x.shape, pads)), dtype=grad_out.dtype)
        for index, offset in enumerate(_offsets(kernel)):
            _window(grad_pad, offset, out_shape, strides)[...] += np.where(arg == index, grad_out, 0.0)
        return _unpad(grad_pad, pads, x.shape)
    if kind == "avg":
        xpad, out_shape, pads = _pad(x, kernel, strides)
        scaled = grad_out / _window_counts(x.shape, kernel, strides, grad_out.dtype)
        grad_pad = np.zeros(xpad.shape, dtype=grad_out.dtype)
        for offset in _offsets(kernel):
            _window(grad_pad, offset, out_shape, strides)[...] += scaled
        return _unpad(grad_pad, pads, x.shape)
    raise ValueError(f"Unknown pooling kind: {kind}. Choose 'max' or 'avg'.")
