from typing import List, Optional, Union

import numpy as np

from src.search_space.space import (
    META_LAYOUTS,
    STREAM_SLOTS,
    STREAM_TYPES,
    Genome,
    LayerKind,
    LayerSpec,
    MetaKind,
    ModuleSpec,
    SearchConstraints,
    StreamSpec,
    StreamType,
    resplit_streams,
)


def _choice(rng: np.random.Generator, options: List):
    return options[int(rng.integers(len(options)))]


def sample_stream(
    stream_type: StreamType, channels: int, constraints: SearchConstraints, rng: np.random.Generator
) -> StreamSpec:
    """Draws the layers of a stream of the given type from the constraint prior."""
    layers = []
    for slot in STREAM_SLOTS[stream_type]:
        if slot == "1x1":
            layers.append(LayerSpec(LayerKind.CONV1X1X1, 1, channels))
        elif slot == "st":
            kind = _choice(rng, constraints.conv_choices())
            layers.append(LayerSpec(kind, _choice(rng, constraints.temporal_choices()), channels))
        else:
            kind = _choice(rng, constraints.pool_choices())
            layers.append(LayerSpec(kind, _choice(rng, constraints.temporal_choices()), channels))
    return StreamSpec(stream_type, tuple(layers))


def sample_random_stream(channels: int, constraints: SearchConstraints, rng: np.random.Generator) -> StreamSpec:
    return sample_stream(_choice(rng, list(STREAM_TYPES)), channels, constraints, rng)


def sample_random_genome(
    meta: MetaKind,
    constraints: SearchConstraints,
    seed: Union[int, np.random.Generator],
    channel_scale: Optional[float] = None,
) -> Genome:
    """
    Samples a genome uniformly from the constrained search space.

    Args:
        meta: Meta-architecture to fill in.
        constraints: Search-space bounds every random choice is drawn from.
        seed: Integer seed or an np.random.Generator to draw from.
        channel_scale: Width multiplier; defaults to the meta's default.

    Returns:
        A genome that passes validate(genome, constraints).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layout = META_LAYOUTS[meta]

    stem = []
    for stem_layer in layout.stem:
        if stem_layer.kind == LayerKind.CONV1X1X1:
            length = 1
        else:
            length = _choice(rng, constraints.temporal_choices())
        stem.append(LayerSpec(stem_layer.kind, length, stem_layer.out_channels))

    modules = []
    for total in layout.module_channels:
        num_streams = int(rng.integers(1, constraints.max_streams + 1))
        repeats = int(rng.integers(1, constraints.max_repeats + 1)) if layout.supports_repeats else 1
        streams = tuple(sample_random_stream(1, constraints, rng) for _ in range(num_streams))
        modules.append(ModuleSpec(resplit_streams(streams, total), repeats, total))

    scale = layout.default_channel_scale if channel_scale is None else channel_scale
    return Genome(meta, tuple(stem), tuple(modules), scale)
