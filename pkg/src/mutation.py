"""
Mutation operators over genomes and the annealed mutation-count schedule.

Four operators: change a space-time conv layer's kind, change a conv or
pooling layer's temporal length, add/remove a parallel stream, and change a
module's repeat count. Every applied mutation is recorded so that a child can
be replayed exactly from its parent.

Target paths: [-1, l] is stem layer l, [m, s, l] is layer l of stream s of
module m, and [m] is module m.
"""
import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import MutationError, MutationExhaustedError
from src.search_space.codec import stream_from_dict, stream_to_dict
from src.search_space.sampler import sample_random_stream
from src.search_space.space import (
    META_LAYOUTS,
    Genome,
    LayerKind,
    LayerSpec,
    ModuleSpec,
    SearchConstraints,
    is_pool,
    is_space_time_conv,
    resplit_streams,
)
from src.search_space.validation import validate

STEM = -1
MAX_RESAMPLES = 100

Path = Tuple[int, ...]


class MutationKind(str, Enum):
    CHANGE_LAYER_TYPE = "change_layer_type"
    CHANGE_TEMPORAL_SIZE = "change_temporal_size"
    ADD_OR_REMOVE_STREAM = "add_or_remove_stream"
    CHANGE_REPEAT_COUNT = "change_repeat_count"


@dataclass(frozen=True)
class MutationRecord:
    kind: MutationKind
    path: Path
    before: Any
    after: Any

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "path": list(self.path), "before": self.before, "after": self.after}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MutationRecord":
        return cls(MutationKind(data["kind"]), tuple(data["path"]), data["before"], data["after"])


MutationLog = List[MutationRecord]


def mutation_count_schedule(round_i: int, d: int, r: int) -> int:
    """Number of mutations at round i: max(ceil(d - i/r), 1), in exact integer arithmetic."""
    if d < 1 or r < 1 or round_i < 0:
        raise ValueError(f"schedule needs d >= 1, r >= 1, i >= 0; got d={d}, r={r}, i={round_i}")
    return max(-((round_i - d * r) // r), 1)


# --- Genome access helpers ---


def get_layer(genome: Genome, path: Path) -> LayerSpec:
    try:
        if path[0] == STEM:
            return genome.stem[path[1]]
        m, s, l = path
        return genome.modules[m].streams[s].layers[l]
    except (IndexError, ValueError):
        raise MutationError(f"path {list(path)} does not address a layer")


def replace_layer(genome: Genome, path: Path, layer: LayerSpec) -> Genome:
    if path[0] == STEM:
        stem = list(genome.stem)
        stem[path[1]] = layer
        return dataclasses.replace(genome, stem=tuple(stem))
    m, s, l = path
    module = genome.modules[m]
    stream = module.streams[s]
    layers = list(stream.layers)
    layers[l] = layer
    streams = list(module.streams)
    streams[s] = dataclasses.replace(stream, layers=tuple(layers))
    return replace_module(genome, m, dataclasses.replace(module, streams=tuple(streams)))


def replace_module(genome: Genome, index: int, module: ModuleSpec) -> Genome:
    modules = list(genome.modules)
    modules[index] = module
    return dataclasses.replace(genome, modules=tuple(modules))


def _module_layer_paths(genome: Genome, predicate) -> List[Path]:
    return [
        (m, s, l)
        for m, module in enumerate(genome.modules)
        for s, stream in enumerate(module.streams)
        for l, layer in enumerate(stream.layers)
        if predicate(layer.kind)
    ]


def layer_type_targets(genome: Genome) -> List[Path]:
    """Space-time conv layers inside modules (stem kinds are fixed)."""
    return _module_layer_paths(genome, is_space_time_conv)


def temporal_size_targets(genome: Genome) -> List[Path]:
    """Stem and module layers with an evolvable temporal length."""
    evolvable = lambda kind: is_space_time_conv(kind) or is_pool(kind)
    stem = [(STEM, l) for l, layer in enumerate(genome.stem) if evolvable(layer.kind)]
    return stem + _module_layer_paths(genome, evolvable)


def _choice(rng: np.random.Generator, options: Sequence):
    return options[int(rng.integers(len(options)))]


def _module(genome: Genome, module_index: int) -> ModuleSpec:
    if not 0 <= module_index < len(genome.modules):
        raise MutationError(f"module {module_index} does not exist")
    return genome.modules[module_index]


# --- Operators ---


def mutate_layer_type(
    genome: Genome, path: Path, rng: np.random.Generator, constraints: Optional[SearchConstraints] = None
) -> Tuple[Genome, MutationRecord]:
    """Replaces a module conv layer's kind with a different allowed kind; length and channels kept."""
    constraints = constraints or SearchConstraints()
    if path[0] == STEM:
        raise MutationError("stem layer kinds are fixed")
    layer = get_layer(genome, path)
    if not is_space_time_conv(layer.kind):
        raise MutationError(f"path {list(path)} addresses a {layer.kind.value} layer, not a space-time conv")
    options = [k for k in constraints.conv_choices() if k != layer.kind]
    if not options:
        raise MutationError("no alternative kind")
    new_kind: LayerKind = _choice(rng, options)
    child = replace_layer(genome, path, dataclasses.replace(layer, kind=new_kind))
    return child, MutationRecord(MutationKind.CHANGE_LAYER_TYPE, tuple(path), layer.kind.value, new_kind.value)


def mutate_temporal_size(
    genome: Genome, path: Path, rng: np.random.Generator, constraints: Optional[SearchConstraints] = None
) -> Tuple[Genome, MutationRecord]:
    """Replaces a conv or pooling layer's temporal length with a different allowed length."""
    constraints = constraints or SearchConstraints()
    layer = get_layer(genome, path)
    if not (is_space_time_conv(layer.kind) or is_pool(layer.kind)):
        raise MutationError(f"path {list(path)} addresses a {layer.kind.value} layer without temporal size")
    options = [t for t in constraints.temporal_choices() if t != layer.temporal_len]
    if not options:
        raise MutationError("no alternative temporal size")
    new_len = int(_choice(rng, options))
    child = replace_layer(genome, path, dataclasses.replace(layer, temporal_len=new_len))
    return child, MutationRecord(MutationKind.CHANGE_TEMPORAL_SIZE, tuple(path), layer.temporal_len, new_len)


def mutate_stream_count(
    genome: Genome, module_index: int, rng: np.random.Generator, constraints: Optional[SearchConstraints] = None
) -> Tuple[Genome, MutationRecord]:
    """
    Adds a freshly sampled stream or removes a random one (probability 1/2
    each, forced at the 1 and max_streams bounds). The module's output width
    is kept and re-split evenly.
    """
    constraints = constraints or SearchConstraints()
    module = _module(genome, module_index)
    n = len(module.streams)
    can_add, can_remove = n < constraints.max_streams, n > 1
    if not (can_add or can_remove):
        raise MutationError("stream count is pinned by max_streams")
    add = can_add if not (can_add and can_remove) else bool(rng.integers(2) == 0)

    streams = list(module.streams)
    if add:
        stream = sample_random_stream(1, constraints, rng)
        streams.append(stream)
        before, after = None, {"index": n, "stream": stream_to_dict(stream)}
    else:
        index = int(rng.integers(n))
        before, after = {"index": index, "stream": stream_to_dict(streams[index])}, None
        del streams[index]
    new_module = dataclasses.replace(module, streams=resplit_streams(tuple(streams), module.total_out_channels))
    child = replace_module(genome, module_index, new_module)
    return child, MutationRecord(MutationKind.ADD_OR_REMOVE_STREAM, (module_index,), before, after)


def mutate_repeat_count(
    genome: Genome, module_index: int, rng: np.random.Generator, constraints: Optional[SearchConstraints] = None
) -> Tuple[Genome, MutationRecord]:
    constraints = constraints or SearchConstraints()
    if not META_LAYOUTS[genome.meta].supports_repeats:
        raise MutationError("repeats fixed")
    module = _module(genome, module_index)
    options = [r for r in range(1, constraints.max_repeats + 1) if r != module.repeats]
    if not options:
        raise MutationError("no alternative repeat count")
    repeats = int(_choice(rng, options))
    child = replace_module(genome, module_index, dataclasses.replace(module, repeats=repeats))
    return child, MutationRecord(MutationKind.CHANGE_REPEAT_COUNT, (module_index,), module.repeats, repeats)


def _targets(kind: MutationKind, genome: Genome) -> List[Path]:
    if kind == MutationKind.CHANGE_LAYER_TYPE:
        return layer_type_targets(genome)
    if kind == MutationKind.CHANGE_TEMPORAL_SIZE:
        return temporal_size_targets(genome)
    if kind == MutationKind.CHANGE_REPEAT_COUNT and not META_LAYOUTS[genome.meta].supports_repeats:
        return []
    return [(m,) for m in range(len(genome.modules))]


def _apply(kind: MutationKind, genome: Genome, target: Path, rng, constraints) -> Tuple[Genome, MutationRecord]:
    if kind == MutationKind.CHANGE_LAYER_TYPE:
        return mutate_layer_type(genome, target, rng, constraints)
    if kind == MutationKind.CHANGE_TEMPORAL_SIZE:
        return mutate_temporal_size(genome, target, rng, constraints)
    if kind == MutationKind.ADD_OR_REMOVE_STREAM:
        return mutate_stream_count(genome, target[0], rng, constraints)
    return mutate_repeat_count(genome, target[0], rng, constraints)


def apply_random_mutations(
    genome: Genome,
    count: int,
    constraints: SearchConstraints,
    rng: np.random.Generator,
    kinds: Optional[Sequence[MutationKind]] = None,
) -> Tuple[Genome, MutationLog]:
    """
    Applies `count` mutations in sequence, each to the result of the previous one.

    The operator is drawn uniformly among kinds with at least one eligible
    target, then the target uniformly among those. Draws an operator rejects
    are resampled, up to MAX_RESAMPLES in total.

    Raises:
        MutationExhaustedError: when the resample budget runs out.
    """
    if count < 1:
        raise ValueError(f"mutation count must be >= 1, got {count}")
    kinds = list(kinds) if kinds is not None else list(MutationKind)
    child, log = genome, []
    failures = 0
    while len(log) < count:
        applicable = [k for k in kinds if _targets(k, child)]
        try:
            if not applicable:
                raise MutationError("no applicable mutation kind")
            kind = _choice(rng, applicable)
            target = _choice(rng, _targets(kind, child))
            child, record = _apply(kind, child, target, rng, constraints)
            log.append(record)
        except MutationError as e:
            failures += 1
            if failures >= MAX_RESAMPLES:
                raise MutationExhaustedError(
                    f"{MAX_RESAMPLES} mutation draws rejected; last reason: {e}"
                )

    report = validate(child, constraints)
    if not report.ok:
        raise MutationError("mutated child failed validation: " + "; ".join(report.violations))
    return child, log


def replay_mutation_log(
    parent: Genome, log: Sequence[MutationRecord], constraints: Optional[SearchConstraints] = None
) -> Genome:
    """Re-applies a recorded mutation log to its parent, reproducing the child exactly."""
    child = parent
    for record in log:
        path = tuple(record.path)
        if record.kind in (MutationKind.CHANGE_LAYER_TYPE, MutationKind.CHANGE_TEMPORAL_SIZE):
            layer = get_layer(child, path)
            if record.kind == MutationKind.CHANGE_LAYER_TYPE:
                if layer.kind.value != record.before:
                    raise MutationError(f"replay mismatch at {list(path)}: kind {layer.kind.value} != {record.before}")
                layer = dataclasses.replace(layer, kind=LayerKind(record.after))
            else:
                if layer.temporal_len != record.before:
                    raise MutationError(f"replay mismatch at {list(path)}: t {layer.temporal_len} != {record.before}")
                layer = dataclasses.replace(layer, temporal_len=int(record.after))
            child = replace_layer(child, path, layer)
        elif record.kind == MutationKind.ADD_OR_REMOVE_STREAM:
            module = _module(child, path[0])
            streams = list(module.streams)
            if record.after is not None:
                streams.insert(record.after["index"], stream_from_dict(record.after["stream"], "after.stream"))
            else:
                del streams[record.before["index"]]
            resplit = resplit_streams(tuple(streams), module.total_out_channels)
            child = replace_module(child, path[0], dataclasses.replace(module, streams=resplit))
        else:
            module = _module(child, path[0])
            if module.repeats != record.before:
                raise MutationError(f"replay mismatch at {list(path)}: repeats {module.repeats} != {record.before}")
            child = replace_module(child, path[0], dataclasses.replace(module, repeats=int(record.after)))

    if constraints is not None and not validate(child, constraints).ok:
        raise MutationError("replayed child failed validation")
    return child
