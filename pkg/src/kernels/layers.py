"""
Differentiable layers for every layer kind of the search space.

Each layer owns its parameters as numpy arrays (updated in place by the
optimizer), and exposes forward(x) -> (y, cache) and
backward(cache, grad_out) -> (grad_in, grads). Inputs are B x T x Y x X x C;
a single T x Y x X x C example is accepted as well.
"""
import abc
import math
from typing import Any, Dict, Tuple

import numpy as np

from src.errors import ShapeError
from src.kernels import conv
from src.kernels.tgm import (
    TGMParams,
    build_gaussian_mixture_kernel,
    gaussian_mixture_kernel_backward,
)
from src.search_space.space import LayerKind, LayerSpec, mixtures_for

Triple = Tuple[int, int, int]


class Layer(abc.ABC):
    """Abstract base class for layers."""

    kind: LayerKind

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}

    @abc.abstractmethod
    def _forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        pass

    @abc.abstractmethod
    def _backward(self, cache: Any, grad_out: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        pass

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        if x.ndim == 4:
            y, cache = self._forward(x[None])
            return y[0], (True, cache)
        y, cache = self._forward(x)
        return y, (False, cache)

    def backward(self, cache: Any, grad_out: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        single, inner = cache
        if single:
            grad_in, grads = self._backward(inner, grad_out[None])
            return grad_in[0], grads
        return self._backward(inner, grad_out)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def param_count(self) -> int:
        """Weight count, bias excluded."""
        return sum(p.size for name, p in self.params.items() if name != "bias")

    def _check_channels(self, x: np.ndarray, expected: int):
        if x.ndim != 5 or x.shape[-1] != expected:
            raise ShapeError(
                f"{self.kind.value} expects input B x T x Y x X x {expected}, got shape {x.shape}"
            )


class Conv3DLayer(Layer):
    kind = LayerKind.CONV3D

    def __init__(self, weight: np.ndarray, bias: np.ndarray, strides: Triple = (1, 1, 1)):
        super().__init__()
        self.params = {"weight": weight, "bias": bias}
        self.strides = strides

    def _forward(self, x):
        self._check_channels(x, self.params["weight"].shape[3])
        return conv.conv3d(x, self.params["weight"], self.strides) + self.params["bias"], x

    def _backward(self, x, grad_out):
        grad_x, grad_w = conv.conv3d_backward(x, self.params["weight"], grad_out, self.strides)
        return grad_x, {"weight": grad_w, "bias": grad_out.sum(axis=(0, 1, 2, 3))}


class Conv2Plus1DLayer(Layer):
    """Frame-wise H x W spatial conv followed by a full L-tap temporal conv mixing Cout -> Cout."""

    kind = LayerKind.CONV2PLUS1D

    def __init__(self, spatial: np.ndarray, temporal: np.ndarray, bias: np.ndarray, strides: Triple = (1, 1, 1)):
        super().__init__()
        self.params = {"spatial": spatial, "temporal": temporal, "bias": bias}
        self.strides = strides

    def _stages(self):
        st, sy, sx = self.strides
        spatial = self.params["spatial"][None]
        temporal = self.params["temporal"][:, None, None]
        return spatial, (1, sy, sx), temporal, (st, 1, 1)

    def _forward(self, x):
        self._check_channels(x, self.params["spatial"].shape[2])
        spatial, s_strides, temporal, t_strides = self._stages()
        mid = conv.conv3d(x, spatial, s_strides)
        return conv.conv3d(mid, temporal, t_strides) + self.params["bias"], (x, mid)

    def _backward(self, cache, grad_out):
        x, mid = cache
        spatial, s_strides, temporal, t_strides = self._stages()
        grad_mid, grad_t = conv.conv3d_backward(mid, temporal, grad_out, t_strides)
        grad_x, grad_s = conv.conv3d_backward(x, spatial, grad_mid, s_strides)
        return grad_x, {
            "spatial": grad_s[0],
            "temporal": grad_t[:, 0, 0],
            "bias": grad_out.sum(axis=(0, 1, 2, 3)),
        }


class ITGMLayer(Layer):
    """
    Inflated temporal Gaussian mixture layer: an inflated 2D spatial kernel S
    followed by a depthwise temporal kernel K (one mixture row per output channel).
    """

    kind = LayerKind.ITGM

    def __init__(self, spatial: np.ndarray, tgm: TGMParams, bias: np.ndarray, strides: Triple = (1, 1, 1)):
        super().__init__()
        if tgm.out_channels != spatial.shape[3]:
            raise ShapeError(
                f"mixing weights have Cout={tgm.out_channels}, spatial kernel has Cout={spatial.shape[3]}"
            )
        self.tgm = tgm
        self.params = {
            "spatial": spatial,
            "mu_hat": tgm.mu_hat,
            "sigma_hat": tgm.sigma_hat,
            "a": tgm.a,
            "bias": bias,
        }
        self.strides = strides

    def _forward(self, x):
        self._check_channels(x, self.params["spatial"].shape[2])
        st, sy, sx = self.strides
        mid = conv.conv3d(x, self.params["spatial"][None], (1, sy, sx))
        kernel = build_gaussian_mixture_kernel(self.tgm)
        out = conv.depthwise_temporal(mid, kernel, st) + self.params["bias"]
        return out, (x, mid, kernel)

    def _backward(self, cache, grad_out):
        x, mid, kernel = cache
        st, sy, sx = self.strides
        grad_mid, grad_kernel = conv.depthwise_temporal_backward(mid, kernel, grad_out, st)
        grad_mu, grad_sigma, grad_a = gaussian_mixture_kernel_backward(self.tgm, grad_kernel)
        grad_x, grad_s = conv.conv3d_backward(x, self.params["spatial"][None], grad_mid, (1, sy, sx))
        return grad_x, {
            "spatial": grad_s[0],
            "mu_hat": grad_mu,
            "sigma_hat": grad_sigma,
            "a": grad_a,
            "bias": grad_out.sum(axis=(0, 1, 2, 3)),
        }


class Conv1x1x1Layer(Layer):
    kind = LayerKind.CONV1X1X1

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        super().__init__()
        self.params = {"weight": weight, "bias": bias}

    def _forward(self, x):
        self._check_channels(x, self.params["weight"].shape[0])
        return x @ self.params["weight"] + self.params["bias"], x

    def _backward(self, x, grad_out):
        grad_w = np.tensordot(x, grad_out, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
        return grad_out @ self.params["weight"].T, {
            "weight": grad_w,
            "bias": grad_out.sum(axis=(0, 1, 2, 3)),
        }


class PoolLayer(Layer):
    def __init__(self, kind: LayerKind, t_len: int, spatial_len: int = 3, strides: Triple = (1, 1, 1)):
        super().__init__()
        self.kind = kind
        self.mode = "max" if kind == LayerKind.MAXPOOL else "avg"
        self.t_len = t_len
        self.spatial_len = spatial_len
        self.strides = strides

    def _forward(self, x):
        if x.ndim != 5:
            raise ShapeError(f"pool expects B x T x Y x X x C input, got shape {x.shape}")
        return conv.pool(x, self.mode, self.t_len, self.spatial_len, self.strides), x

    def _backward(self, x, grad_out):
        return conv.pool_backward(x, grad_out, self.mode, self.t_len, self.spatial_len, self.strides), {}


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def build_layer(
    spec: LayerSpec,
    in_channels: int,
    out_channels: int,
    rng: np.random.Generator,
    strides: Triple = (1, 1, 1),
    dtype=np.float64,
) -> Layer:
    """
    Factory that instantiates and initializes the layer described by a LayerSpec.

    Weights are Glorot-uniform; iTGM centers start evenly spaced (mu_hat in
    [-1, 1]), with unit widths, uniform mixing and zero biases.
    """
    kind, length, k = spec.kind, spec.temporal_len, spec.spatial_len
    cin, cout = in_channels, out_channels
    bias = np.zeros(cout, dtype=dtype)
    if kind == LayerKind.CONV3D:
        volume = length * k * k
        weight = _glorot(rng, (length, k, k, cin, cout), volume * cin, volume * cout, dtype)
        return Conv3DLayer(weight, bias, strides)
    if kind == LayerKind.CONV2PLUS1D:
        spatial = _glorot(rng, (k, k, cin, cout), k * k * cin, k * k * cout, dtype)
        temporal = _glorot(rng, (length, cout, cout), length * cout, length * cout, dtype)
        return Conv2Plus1DLayer(spatial, temporal, bias, strides)
    if kind == LayerKind.ITGM:
        m = mixtures_for(length)
        spatial = _glorot(rng, (k, k, cin, cout), k * k * cin, k * k * cout, dtype)
        mu_hat = np.linspace(-1.0, 1.0, m).astype(dtype) if m > 1 else np.zeros(1, dtype=dtype)
        tgm = TGMParams(mu_hat, np.zeros(m, dtype=dtype), np.zeros((cout, m), dtype=dtype), length)
        return ITGMLayer(spatial, tgm, bias, strides)
    if kind == LayerKind.CONV1X1X1:
        return Conv1x1x1Layer(_glorot(rng, (cin, cout), cin, cout, dtype), bias)
    if kind in (LayerKind.MAXPOOL, LayerKind.AVGPOOL):
        return PoolLayer(kind, length, k, strides)
    raise ValueError(f"Unsupported layer kind: {kind}")


def conv3d_forward(x: np.ndarray, layer: Conv3DLayer) -> np.ndarray:
    return layer(x)


def conv2plus1d_forward(x: np.ndarray, layer: Conv2Plus1DLayer) -> np.ndarray:
    return layer(x)


def conv1x1x1_forward(x: np.ndarray, layer: Conv1x1x1Layer) -> np.ndarray:
    return layer(x)


def itgm_forward(x: np.ndarray, layer: ITGMLayer) -> np.ndarray:
    return layer(x)


def pool_forward(
    x: np.ndarray, kind: str, t_len: int, spatial_len: int = 3, strides: Triple = (1, 1, 1)
) -> np.ndarray:
    """Pools a T x Y x X x C (or batched) tensor; kind is 'max' or 'avg'."""
    layer_kind = LayerKind.MAXPOOL if kind == "max" else LayerKind.AVGPOOL
    if kind not in ("max", "avg"):
        raise ValueError(f"Unknown pooling kind: {kind}. Choose 'max' or 'avg'.")
    return PoolLayer(layer_kind, t_len, spatial_len, strides)(x)


def layer_backward(
    layer: Layer, x: np.ndarray, grad_out: np.ndarray
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Runs the forward pass on x and returns (grad_in, parameter gradients) for grad_out."""
    y, cache = layer.forward(x)
    if grad_out.shape != y.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {y.shape}")
    return layer.backward(cache, grad_out)
