"""Reference implementations and gradient-checking utilities shared by the tests."""
from typing import Callable, Dict

import numpy as np

from src.search_space.space import (
    Genome,
    LayerKind,
    LayerSpec,
    MetaKind,
    ModuleSpec,
    StreamSpec,
    StreamType,
    resplit_streams,
)


def _pad_info(size: int, kernel: int, stride: int):
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, out


def naive_conv3d(x: np.ndarray, w: np.ndarray, strides=(1, 1, 1)) -> np.ndarray:
    """Element-by-element SAME cross-correlation, the slow way."""
    B, T, Y, X, _ = x.shape
    L, H, W, _, cout = w.shape
    (pt, ot), (py, oy), (px, ox) = (
        _pad_info(T, L, strides[0]),
        _pad_info(Y, H, strides[1]),
        _pad_info(X, W, strides[2]),
    )
    out = np.zeros((B, ot, oy, ox, cout))
    for b, t, i, j in np.ndindex(B, ot, oy, ox):
        acc = np.zeros(cout)
        for l, h, k in np.ndindex(L, H, W):
            tt, yy, xx = t * strides[0] - pt + l, i * strides[1] - py + h, j * strides[2] - px + k
            if 0 <= tt < T and 0 <= yy < Y and 0 <= xx < X:
                acc += x[b, tt, yy, xx] @ w[l, h, k]
        out[b, t, i, j] = acc
    return out


def naive_pool(x: np.ndarray, kind: str, t_len: int, spatial_len: int, strides=(1, 1, 1)) -> np.ndarray:
    """Pools over the real (non-padding) elements of each SAME window."""
    B, T, Y, X, C = x.shape
    (pt, ot), (py, oy), (px, ox) = (
        _pad_info(T, t_len, strides[0]),
        _pad_info(Y, spatial_len, strides[1]),
        _pad_info(X, spatial_len, strides[2]),
    )
    out = np.zeros((B, ot, oy, ox, C))
    for b, t, i, j in np.ndindex(B, ot, oy, ox):
        t0, y0, x0 = t * strides[0] - pt, i * strides[1] - py, j * strides[2] - px
        window = x[b, max(t0, 0) : t0 + t_len, max(y0, 0) : y0 + spatial_len, max(x0, 0) : x0 + spatial_len]
        window = window.reshape(-1, C)
        out[b, t, i, j] = window.max(axis=0) if kind == "max" else window.mean(axis=0)
    return out


def numerical_gradient(f: Callable[[], float], array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of f with respect to every entry of array (perturbed in place)."""
    grad = np.zeros_like(array)
    for index in np.ndindex(*array.shape):
        original = array[index]
        array[index] = original + eps
        plus = f()
        array[index] = original - eps
        minus = f()
        array[index] = original
        grad[index] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-5)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def layer_gradient_errors(layer, x: np.ndarray, rng: np.random.Generator, eps: float = 1e-5) -> Dict[str, float]:
    """
    Compares the layer's backward pass against central differences of
    sum(layer(x) * R) for a fixed random R; returns the max relative error
    for the input and each parameter.
    """
    y, cache = layer.forward(x)
    cotangent = rng.standard_normal(y.shape)
    grad_in, grads = layer.backward(cache, cotangent)
    loss = lambda: float(np.sum(layer(x) * cotangent))

    errors = {"input": relative_error(grad_in, numerical_gradient(loss, x, eps))}
    for name, param in layer.params.items():
        errors[name] = relative_error(grads[name], numerical_gradient(loss, param, eps))
    return errors


def stream(stream_type: StreamType, *layers) -> StreamSpec:
    """Builds a stream from (kind, temporal_len) pairs; channels are filled in by the module."""
    return StreamSpec(stream_type, tuple(LayerSpec(kind, t, 1) for kind, t in layers))


def toy_genome(channel_scale: float = 0.0625, repeats=(1, 1)) -> Genome:
    """
    A small valid toy genome touching every layer kind: module 0 has a
    conv3d stream and a max-pool stream, module 1 a (2+1)D/iTGM stream and a
    plain 1x1 stream.
    """
    module0 = resplit_streams(
        (
            stream(StreamType.T2_ONE_ST_CONV, (LayerKind.CONV1X1X1, 1), (LayerKind.CONV3D, 3)),
            stream(StreamType.T4_POOL_THEN_1X1, (LayerKind.MAXPOOL, 3), (LayerKind.CONV1X1X1, 1)),
        ),
        128,
    )
    module1 = resplit_streams(
        (
            stream(
                StreamType.T3_TWO_ST_CONV,
                (LayerKind.CONV1X1X1, 1),
                (LayerKind.CONV2PLUS1D, 3),
                (LayerKind.ITGM, 3),
            ),
            stream(StreamType.T1_ONLY_1X1, (LayerKind.CONV1X1X1, 1)),
        ),
        256,
    )
    return Genome(
        MetaKind.TOY,
        (LayerSpec(LayerKind.CONV3D, 3, 64),),
        (ModuleSpec(module0, repeats[0], 128), ModuleSpec(module1, repeats[1], 256)),
        channel_scale,
    )
