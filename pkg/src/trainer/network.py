"""
Executable networks built from genomes.

A network is a sequence of stages: stem layers, module blocks (one per
repeat) with the meta-architecture's fixed downsampling pools in between,
then global average pooling over T, Y, X and a linear classifier.

Inside a block, streams run in parallel on the block input, their outputs
are concatenated along channels and added to the (projected, if widths
differ) block input before a final ReLU. Every conv is followed by a ReLU,
except a 1x1x1 conv that ends its stream.

Parameters are addressed by dotted names such as
"modules.1.repeat.0.stream.2.layer.1.weight" or "head.weight".
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.errors import InvalidGenomeError, ShapeError
from src.kernels.layers import Layer, PoolLayer, _glorot, build_layer
from src.search_space.space import (
    META_LAYOUTS,
    Genome,
    LayerKind,
    LayerSpec,
    effective_channels,
    is_pool,
    module_stream_channels,
)
from src.search_space.validation import validate


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(len(labels))
    loss = -float(np.mean(log_probs[rows, labels]))
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / len(labels)


@dataclass
class LayerStage:
    name: str
    layer: Layer
    relu: bool

    def parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        for pname, p in self.layer.params.items():
            yield f"{self.name}.{pname}", p

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        y, cache = self.layer.forward(x)
        if self.relu:
            y = np.maximum(y, 0.0)
        return y, (cache, y if self.relu else None)

    def backward(self, cache: Any, grad_out: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        inner, activated = cache
        if activated is not None:
            grad_out = grad_out * (activated > 0)
        grad_in, grads = self.layer.backward(inner, grad_out)
        return grad_in, {f"{self.name}.{k}": g for k, g in grads.items()}


@dataclass
class ModuleBlock:
    """One repeat of a module: parallel streams, concatenation, residual add, ReLU."""

    name: str
    streams: List[List[LayerStage]]
    widths: List[int]
    projection: Optional[LayerStage] = None

    def parameters(self) -> Iterator[Tuple[str, np.ndarray]]:
        for stream in self.streams:
            for stage in stream:
                yield from stage.parameters()
        if self.projection is not None:
            yield from self.projection.parameters()

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        outputs, stream_caches = [], []
        for stream in self.streams:
            h, caches = x, []
            for stage in stream:
                h, cache = stage.forward(h)
                caches.append(cache)
            outputs.append(h)
            stream_caches.append(caches)
        merged = np.concatenate(outputs, axis=-1)
        if self.projection is not None:
            skip, proj_cache = self.projection.forward(x)
        else:
            skip, proj_cache = x, None
        if merged.shape != skip.shape:
            raise ShapeError(f"{self.name}: stream output {merged.shape} does not match residual {skip.shape}")
        y = np.maximum(merged + skip, 0.0)
        return y, (stream_caches, proj_cache, y)

    def backward(self, cache: Any, grad_out: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        stream_caches, proj_cache, y = cache
        grad = grad_out * (y > 0)
        grads: Dict[str, np.ndarray] = {}
        if self.projection is not None:
            grad_in, proj_grads = self.projection.backward(proj_cache, grad)
            grads.update(proj_grads)
        else:
            grad_in = grad.copy()

        bounds = np.cumsum(self.widths)[:-1]
        for stream, caches, g in zip(self.streams, stream_caches, np.split(grad, bounds, axis=-1)):
            for stage, stage_cache in zip(reversed(stream), reversed(caches)):
                g, stage_grads = stage.backward(stage_cache, g)
                grads.update(stage_grads)
            grad_in = grad_in + g
        return grad_in, grads


@dataclass
class Network:
    genome: Genome
    num_classes: int
    in_channels: int
    stages: List[Any]
    head_weight: np.ndarray
    head_bias: np.ndarray
    dtype: Any = np.float64
    _params: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for stage in self.stages:
            for name, p in stage.parameters():
                self._params[name] = p
        self._params["head.weight"] = self.head_weight
        self._params["head.bias"] = self.head_bias

    def parameters(self) -> Dict[str, np.ndarray]:
        """Parameter arrays by name. Arrays are live: updating them in place updates the network."""
        return self._params

    def parameter_count(self) -> int:
        return sum(p.size for p in self._params.values())

    def named_layers(self) -> Iterator[Tuple[str, Layer]]:
        """Every layer in execution order with its dotted name."""
        for stage in self.stages:
            if isinstance(stage, ModuleBlock):
                for stream in stage.streams:
                    for inner in stream:
                        yield inner.name, inner.layer
                if stage.projection is not None:
                    yield stage.projection.name, stage.projection.layer
            else:
                yield stage.name, stage.layer

    def bias_count(self) -> int:
        return sum(p.size for name, p in self._params.items() if name.endswith(".bias"))

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        single = x.ndim == 4
        if single:
            x = x[None]
        if x.ndim != 5 or x.shape[-1] != self.in_channels:
            raise ShapeError(f"network expects B x T x Y x X x {self.in_channels} input, got shape {x.shape}")
        h = x.astype(self.dtype, copy=False)
        caches = []
        for stage in self.stages:
            h, cache = stage.forward(h)
            caches.append(cache)
        features = h.mean(axis=(1, 2, 3))
        logits = features @ self.head_weight + self.head_bias
        cache = (caches, features, h.shape, single)
        return (logits[0] if single else logits), cache

    def backward(self, cache: Any, grad_logits: np.ndarray) -> Dict[str, np.ndarray]:
        caches, features, feature_map_shape, single = cache
        if single:
            grad_logits = grad_logits[None]
        grads = {
            "head.weight": features.T @ grad_logits,
            "head.bias": grad_logits.sum(axis=0),
        }
        grad_features = grad_logits @ self.head_weight.T
        spatial = feature_map_shape[1] * feature_map_shape[2] * feature_map_shape[3]
        grad = np.broadcast_to(
            (grad_features / spatial)[:, None, None, None, :], feature_map_shape
        ).copy()
        for stage, stage_cache in zip(reversed(self.stages), reversed(caches)):
            grad, stage_grads = stage.backward(stage_cache, grad)
            grads.update(stage_grads)
        return grads

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        logits, cache = self.forward(x)
        loss, grad_logits = softmax_cross_entropy(logits, labels)
        return loss, self.backward(cache, grad_logits)

    def predict_proba(self, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Softmax class probabilities for a batch, evaluated in chunks."""
        chunks = [softmax(self.logits(x[i : i + batch_size])) for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks, axis=0)


def _stream_stages(
    prefix: str, layers, in_channels: int, share: int, rng: np.random.Generator, dtype
) -> List[LayerStage]:
    stages, channels = [], in_channels
    for l, spec in enumerate(layers):
        cout = channels if is_pool(spec.kind) else share
        last_1x1 = l == len(layers) - 1 and spec.kind == LayerKind.CONV1X1X1
        layer = build_layer(spec, channels, cout, rng, dtype=dtype)
        stages.append(LayerStage(f"{prefix}.layer.{l}", layer, relu=not is_pool(spec.kind) and not last_1x1))
        channels = cout
    return stages


def build_network(
    genome: Genome,
    num_classes: int,
    init_seed: int,
    in_channels: int = 3,
    dtype=np.float64,
) -> Network:
    """
    Instantiates the network a genome describes, with all weights drawn from init_seed.

    Args:
        genome: A valid genome.
        num_classes: Width of the classifier output.
        init_seed: Seed of the weight initialization stream.
        in_channels: Channels of the input clips.
        dtype: Floating point type of every parameter and activation.

    Returns:
        The initialized Network.
    """
    report = validate(genome)
    if not report.ok:
        raise InvalidGenomeError("; ".join(report.violations))
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")

    rng = np.random.default_rng(init_seed)
    layout = META_LAYOUTS[genome.meta]
    stages: List[Any] = []
    channels = in_channels

    for i, (spec, slot) in enumerate(zip(genome.stem, layout.stem)):
        cout = channels if is_pool(spec.kind) else effective_channels(spec.out_channels, genome.channel_scale)
        layer = build_layer(spec, channels, cout, rng, strides=slot.strides, dtype=dtype)
        stages.append(LayerStage(f"stem.{i}", layer, relu=not is_pool(spec.kind)))
        channels = cout

    for m, module in enumerate(genome.modules):
        shares = module_stream_channels(module, genome.channel_scale)
        module_out = sum(shares)
        for r in range(module.repeats):
            prefix = f"modules.{m}.repeat.{r}"
            streams = [
                _stream_stages(f"{prefix}.stream.{s}", stream.layers, channels, share, rng, dtype)
                for s, (stream, share) in enumerate(zip(module.streams, shares))
            ]
            projection = None
            if channels != module_out:
                spec = LayerSpec(LayerKind.CONV1X1X1, 1, module_out)
                projection = LayerStage(
                    f"{prefix}.projection", build_layer(spec, channels, module_out, rng, dtype=dtype), relu=False
                )
            stages.append(ModuleBlock(prefix, streams, list(shares), projection))
            channels = module_out
        if m in layout.downsample_after:
            pool = PoolLayer(LayerKind.MAXPOOL, 1, 3, layout.downsample_strides)
            stages.append(LayerStage(f"modules.{m}.downsample", pool, relu=False))

    head_weight = _glorot(rng, (channels, num_classes), channels, num_classes, dtype)
    head_bias = np.zeros(num_classes, dtype=dtype)
    return Network(genome, num_classes, in_channels, stages, head_weight, head_bias, dtype)
