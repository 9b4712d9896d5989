import math
from typing import Dict, List, Tuple

from src.errors import InvalidGenomeError
from src.kernels.params import param_count
from src.search_space.space import (
    META_LAYOUTS,
    SPACE_TIME_CONV_KINDS,
    Genome,
    LayerKind,
    LayerSpec,
    MetaKind,
    SearchConstraints,
    effective_channels,
    is_pool,
    is_space_time_conv,
    module_stream_channels,
)
from src.search_space.validation import validate


def _stream_layer_channels(layers: Tuple[LayerSpec, ...], in_channels: int, share: int) -> List[Tuple[LayerSpec, int, int]]:
    """(layer, cin, cout) for each layer of a stream, pools passing channels through."""
    wiring = []
    channels = in_channels
    for layer in layers:
        cout = channels if is_pool(layer.kind) else share
        wiring.append((layer, channels, cout))
        channels = cout
    return wiring


def count_genome_parameters(genome: Genome, in_channels: int = 3) -> int:
    """
    Counts the learnable weights of every layer of a genome.

    Repeated modules contribute once per repeat, and a residual projection
    (Cin*Cout weights) is counted wherever a module's input width differs from
    its output width. Biases and the classifier head are excluded.
    """
    report = validate(genome)
    if not report.ok:
        raise InvalidGenomeError("; ".join(report.violations))

    total = 0
    channels = in_channels
    for layer in genome.stem:
        cout = channels if is_pool(layer.kind) else effective_channels(layer.out_channels, genome.channel_scale)
        total += param_count(layer, channels, cout)
        channels = cout

    for module in genome.modules:
        shares = module_stream_channels(module, genome.channel_scale)
        module_out = sum(shares)
        for _ in range(module.repeats):
            for stream, share in zip(module.streams, shares):
                for layer, cin, cout in _stream_layer_channels(stream.layers, channels, share):
                    total += param_count(layer, cin, cout)
            if channels != module_out:
                total += channels * module_out
            channels = module_out
    return total


def layer_option_count(constraints: SearchConstraints) -> Tuple[int, int]:
    """Choices per space-time conv slot and per pooling slot, each including 'omit'."""
    lengths = len(constraints.allowed_temporal_lens)
    return len(constraints.conv_kinds) * lengths + 1, lengths + 1


def search_space_log10_size(constraints: SearchConstraints, meta: MetaKind, B: int, D: int) -> float:
    """
    log10 of the order estimate conv^(5 + B*N) + pool^(D*N), evaluated in log space.

    Args:
        constraints: Search-space bounds defining the per-slot option counts.
        meta: Meta-architecture; fixes the module count N.
        B: Maximum number of space-time conv layers per module.
        D: Maximum number of pooling layers per module.
    """
    if B < 1 or D < 1:
        raise ValueError(f"B and D must be >= 1, got B={B}, D={D}.")
    n = META_LAYOUTS[meta].num_modules
    conv_options, pool_options = layer_option_count(constraints)
    a = (5 + B * n) * math.log10(conv_options)
    b = D * n * math.log10(pool_options)
    high, low = max(a, b), min(a, b)
    return high + math.log10(1.0 + 10.0 ** (low - high))


def layer_statistics(genome: Genome) -> Dict[str, float]:
    """
    Counts space-time conv layers per kind (stem and modules, repeats not
    expanded) and the mean temporal length of each kind.
    """
    lengths: Dict[LayerKind, List[int]] = {k: [] for k in SPACE_TIME_CONV_KINDS}
    layers = list(genome.stem) + [
        layer for module in genome.modules for stream in module.streams for layer in stream.layers
    ]
    for layer in layers:
        if is_space_time_conv(layer.kind):
            lengths[layer.kind].append(layer.temporal_len)

    stats: Dict[str, float] = {}
    for kind, values in lengths.items():
        stats[f"{kind.value}_count"] = len(values)
        stats[f"{kind.value}_mean_t"] = sum(values) / len(values) if values else 0.0
    stats["space_time_layers"] = sum(len(v) for v in lengths.values())
    return stats
