import math
from dataclasses import dataclass, field
from typing import List, Optional

from src.search_space.space import (
    META_LAYOUTS,
    STREAM_SLOTS,
    Genome,
    LayerKind,
    LayerSpec,
    ModuleSpec,
    SearchConstraints,
    StreamSpec,
    is_pool,
    is_space_time_conv,
    split_channels,
)


@dataclass
class ValidationReport:
    ok: bool = True
    violations: List[str] = field(default_factory=list)

    def add(self, path: str, reason: str):
        self.ok = False
        self.violations.append(f"{path}: {reason}")


def _check_layer(
    layer: LayerSpec, path: str, constraints: SearchConstraints, report: ValidationReport
):
    if layer.out_channels < 1:
        report.add(path, "out_channels must be positive")
    if layer.kind == LayerKind.CONV1X1X1:
        if layer.temporal_len != 1:
            report.add(path, "conv1x1 temporal_len must be 1")
    elif layer.temporal_len not in constraints.allowed_temporal_lens:
        report.add(path, f"temporal_len not in allowed set ({layer.temporal_len})")


def _slot_matches(slot: str, kind: LayerKind, constraints: SearchConstraints) -> bool:
    if slot == "1x1":
        return kind == LayerKind.CONV1X1X1
    if slot == "st":
        return is_space_time_conv(kind) and kind in constraints.conv_kinds
    return is_pool(kind) and kind in constraints.pool_kinds


def _check_stream(
    stream: StreamSpec,
    path: str,
    share: Optional[int],
    constraints: SearchConstraints,
    report: ValidationReport,
):
    slots = STREAM_SLOTS[stream.stream_type]
    kinds = [l.kind.value for l in stream.layers]
    if len(stream.layers) != len(slots) or not all(
        _slot_matches(slot, l.kind, constraints) for slot, l in zip(slots, stream.layers)
    ):
        report.add(path, f"layers {kinds} do not match stream type {stream.stream_type.value}")
    for i, layer in enumerate(stream.layers):
        layer_path = f"{path}.layers[{i}]"
        _check_layer(layer, layer_path, constraints, report)
        if share is not None and layer.out_channels != share:
            report.add(layer_path, f"out_channels {layer.out_channels} != stream share {share}")


def _check_module(
    module: ModuleSpec,
    path: str,
    supports_repeats: bool,
    constraints: SearchConstraints,
    report: ValidationReport,
):
    n = len(module.streams)
    if n < 1:
        report.add(path, "streams < 1")
    if n > constraints.max_streams:
        report.add(path, f"streams > {constraints.max_streams}")
    if not supports_repeats and module.repeats != 1:
        report.add(path, "repeats fixed to 1 for this meta-architecture")
    elif not 1 <= module.repeats <= constraints.max_repeats:
        report.add(path, f"repeats {module.repeats} outside [1, {constraints.max_repeats}]")

    shares: List[Optional[int]] = [None] * n
    if module.total_out_channels < max(n, 1):
        report.add(path, "out_channels must be at least the number of streams")
    elif n:
        shares = split_channels(module.total_out_channels, n)
    for s, stream in enumerate(module.streams):
        _check_stream(stream, f"{path}.streams[{s}]", shares[s], constraints, report)


def validate(genome: Genome, constraints: Optional[SearchConstraints] = None) -> ValidationReport:
    """
    Checks every structural invariant of a genome.

    Args:
        genome: The genome to check.
        constraints: Search-space bounds; defaults to the full space.

    Returns:
        A report whose violations name the offending path, e.g.
        "modules[1]: streams > 6".
    """
    constraints = constraints or SearchConstraints()
    report = ValidationReport()
    layout = META_LAYOUTS[genome.meta]

    if not (math.isfinite(genome.channel_scale) and genome.channel_scale > 0):
        report.add("channel_scale", "must be a positive finite number")

    if len(genome.stem) != len(layout.stem):
        report.add("stem", f"expected {len(layout.stem)} layers for meta {genome.meta.value}, got {len(genome.stem)}")
    for i, (layer, expected) in enumerate(zip(genome.stem, layout.stem)):
        path = f"stem[{i}]"
        if layer.kind != expected.kind:
            report.add(path, f"kind {layer.kind.value} != fixed stem kind {expected.kind.value}")
        _check_layer(layer, path, constraints, report)

    if len(genome.modules) != layout.num_modules:
        report.add(
            "modules",
            f"expected {layout.num_modules} modules for meta {genome.meta.value}, got {len(genome.modules)}",
        )
    for m, module in enumerate(genome.modules):
        _check_module(module, f"modules[{m}]", layout.supports_repeats, constraints, report)

    return report
