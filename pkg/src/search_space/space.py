"""
Search-space vocabulary for spatio-temporal architecture genomes.

A genome fills the blanks of a fixed meta-architecture: a stem of fixed layer
kinds (with evolvable temporal lengths) followed by N evolvable modules. Each
module holds 1-6 parallel streams of one of four types; stream outputs are
concatenated and added to a residual connection, and the module may be
repeated. All types here are immutable value objects.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, List, Tuple


class LayerKind(str, Enum):
    CONV3D = "conv3d"
    CONV2PLUS1D = "conv21d"
    ITGM = "itgm"
    CONV1X1X1 = "conv1x1"
    MAXPOOL = "maxpool"
    AVGPOOL = "avgpool"


class StreamType(str, Enum):
    T1_ONLY_1X1 = "t1"
    T2_ONE_ST_CONV = "t2"
    T3_TWO_ST_CONV = "t3"
    T4_POOL_THEN_1X1 = "t4"


class MetaKind(str, Enum):
    INCEPTION = "inception"
    RESNET = "resnet"
    TOY = "toy"


# Every random choice indexes into these fixed orderings.
SPACE_TIME_CONV_KINDS: Tuple[LayerKind, ...] = (
    LayerKind.CONV3D,
    LayerKind.CONV2PLUS1D,
    LayerKind.ITGM,
)
POOL_KINDS: Tuple[LayerKind, ...] = (LayerKind.MAXPOOL, LayerKind.AVGPOOL)
STREAM_TYPES: Tuple[StreamType, ...] = tuple(StreamType)
TEMPORAL_LENGTHS: Tuple[int, ...] = (1, 3, 5, 7, 9, 11)

MAX_STREAMS = 6
MAX_REPEATS = 6
SPATIAL_KERNEL = 3
DEFAULT_MIXTURES = 4


def is_space_time_conv(kind: LayerKind) -> bool:
    return kind in SPACE_TIME_CONV_KINDS


def is_pool(kind: LayerKind) -> bool:
    return kind in POOL_KINDS


def mixtures_for(temporal_len: int) -> int:
    """Number of Gaussians M used by an iTGM layer of the given length."""
    return min(DEFAULT_MIXTURES, temporal_len)


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    temporal_len: int
    out_channels: int

    @property
    def spatial_len(self) -> int:
        return 1 if self.kind == LayerKind.CONV1X1X1 else SPATIAL_KERNEL


@dataclass(frozen=True)
class StreamSpec:
    stream_type: StreamType
    layers: Tuple[LayerSpec, ...]


@dataclass(frozen=True)
class ModuleSpec:
    streams: Tuple[StreamSpec, ...]
    repeats: int
    total_out_channels: int


@dataclass(frozen=True)
class Genome:
    meta: MetaKind
    stem: Tuple[LayerSpec, ...]
    modules: Tuple[ModuleSpec, ...]
    channel_scale: float = 1.0


@dataclass(frozen=True)
class SearchConstraints:
    """
    Bounds of the search space. Defaults reproduce the full space; dropping
    ITGM from conv_kinds gives the search-without-iTGM ablation.
    """

    allowed_temporal_lens: FrozenSet[int] = frozenset(TEMPORAL_LENGTHS)
    max_streams: int = MAX_STREAMS
    max_repeats: int = MAX_REPEATS
    conv_kinds: FrozenSet[LayerKind] = frozenset(SPACE_TIME_CONV_KINDS)
    pool_kinds: FrozenSet[LayerKind] = frozenset({LayerKind.MAXPOOL})

    def __post_init__(self):
        # Imported here to keep this module free of package-level cycles.
        from src.errors import ConfigError

        if not self.allowed_temporal_lens:
            raise ConfigError("allowed_temporal_lens cannot be empty.")
        bad_lens = set(self.allowed_temporal_lens) - set(TEMPORAL_LENGTHS)
        if bad_lens:
            raise ConfigError(
                f"allowed_temporal_lens must be a subset of {list(TEMPORAL_LENGTHS)}, got extra {sorted(bad_lens)}."
            )
        if not 1 <= self.max_streams <= MAX_STREAMS:
            raise ConfigError(f"max_streams must be in [1, {MAX_STREAMS}], got {self.max_streams}.")
        if not 1 <= self.max_repeats <= MAX_REPEATS:
            raise ConfigError(f"max_repeats must be in [1, {MAX_REPEATS}], got {self.max_repeats}.")
        if not self.conv_kinds or not set(self.conv_kinds) <= set(SPACE_TIME_CONV_KINDS):
            raise ConfigError("conv_kinds must be a non-empty subset of the space-time conv kinds.")
        if not self.pool_kinds or not set(self.pool_kinds) <= set(POOL_KINDS):
            raise ConfigError("pool_kinds must be a non-empty subset of {maxpool, avgpool}.")

    def temporal_choices(self) -> List[int]:
        return sorted(self.allowed_temporal_lens)

    def conv_choices(self) -> List[LayerKind]:
        return [k for k in SPACE_TIME_CONV_KINDS if k in self.conv_kinds]

    def pool_choices(self) -> List[LayerKind]:
        return [k for k in POOL_KINDS if k in self.pool_kinds]


@dataclass(frozen=True)
class StemLayerLayout:
    kind: LayerKind
    default_len: int
    out_channels: int
    strides: Tuple[int, int, int]


@dataclass(frozen=True)
class MetaLayout:
    """Fixed skeleton of a meta-architecture: stem, module widths and downsampling."""

    stem: Tuple[StemLayerLayout, ...]
    module_channels: Tuple[int, ...]
    downsample_after: Tuple[int, ...]
    downsample_strides: Tuple[int, int, int]
    supports_repeats: bool
    default_channel_scale: float = 1.0

    @property
    def num_modules(self) -> int:
        return len(self.module_channels)


META_LAYOUTS: Dict[MetaKind, MetaLayout] = {
    MetaKind.TOY: MetaLayout(
        stem=(StemLayerLayout(LayerKind.CONV3D, 3, 64, (1, 2, 2)),),
        module_channels=(128, 256),
        downsample_after=(0,),
        downsample_strides=(1, 2, 2),
        supports_repeats=True,
        default_channel_scale=0.0625,
    ),
    MetaKind.RESNET: MetaLayout(
        stem=(
            StemLayerLayout(LayerKind.CONV3D, 7, 64, (1, 2, 2)),
            StemLayerLayout(LayerKind.CONV3D, 3, 192, (1, 2, 2)),
        ),
        module_channels=(256, 512, 1024, 2048),
        downsample_after=(0, 1, 2),
        downsample_strides=(2, 2, 2),
        supports_repeats=True,
    ),
    MetaKind.INCEPTION: MetaLayout(
        stem=(
            StemLayerLayout(LayerKind.CONV3D, 7, 64, (1, 2, 2)),
            StemLayerLayout(LayerKind.MAXPOOL, 1, 64, (1, 2, 2)),
            StemLayerLayout(LayerKind.CONV1X1X1, 1, 64, (1, 1, 1)),
            StemLayerLayout(LayerKind.CONV3D, 3, 192, (1, 1, 1)),
            StemLayerLayout(LayerKind.MAXPOOL, 1, 192, (1, 2, 2)),
        ),
        module_channels=(256, 480, 512, 512, 512, 528, 832, 832, 1024),
        downsample_after=(1, 6),
        downsample_strides=(2, 2, 2),
        supports_repeats=False,
    ),
}

# Expected layer kinds per stream type; "st" marks a space-time conv slot, "pool" a pooling slot.
STREAM_SLOTS: Dict[StreamType, Tuple[str, ...]] = {
    StreamType.T1_ONLY_1X1: ("1x1",),
    StreamType.T2_ONE_ST_CONV: ("1x1", "st"),
    StreamType.T3_TWO_ST_CONV: ("1x1", "st", "st"),
    StreamType.T4_POOL_THEN_1X1: ("pool", "1x1"),
}


def effective_channels(channels: int, scale: float) -> int:
    """Channel count after applying the genome's width multiplier."""
    return max(1, int(round(channels * scale)))


def split_channels(total: int, num_streams: int) -> List[int]:
    """Evenly divides channels across streams; the remainder goes to the first stream."""
    base, remainder = divmod(total, num_streams)
    shares = [base] * num_streams
    shares[0] += remainder
    return shares


def module_stream_channels(module: ModuleSpec, scale: float) -> List[int]:
    """Effective output channels of each stream of a module."""
    n = len(module.streams)
    total = max(n, effective_channels(module.total_out_channels, scale))
    return split_channels(total, n)


def with_channels(stream: StreamSpec, channels: int) -> StreamSpec:
    """Returns the stream with every layer's channel count set to the given share."""
    return StreamSpec(
        stream.stream_type,
        tuple(LayerSpec(l.kind, l.temporal_len, channels) for l in stream.layers),
    )


def resplit_streams(streams: Tuple[StreamSpec, ...], total: int) -> Tuple[StreamSpec, ...]:
    shares = split_channels(total, len(streams))
    return tuple(with_channels(s, c) for s, c in zip(streams, shares))
