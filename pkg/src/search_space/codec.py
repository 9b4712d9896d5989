"""
Genome <-> JSON document conversion.

Parsing is strict: every field of the schema is required, unknown fields are
rejected, and the parsed genome must pass validation. Errors carry the JSON
path of the offending field so archived documents can be repaired by hand.
"""
import hashlib
import json
from enum import Enum
from typing import Any, Dict, List, Optional, Type

from src.errors import GenomeParseError
from src.search_space.space import (
    Genome,
    LayerKind,
    LayerSpec,
    MetaKind,
    ModuleSpec,
    SearchConstraints,
    StreamSpec,
    StreamType,
)
from src.search_space.validation import validate


def layer_to_dict(layer: LayerSpec) -> Dict[str, Any]:
    return {"kind": layer.kind.value, "t": layer.temporal_len, "c": layer.out_channels}


def stream_to_dict(stream: StreamSpec) -> Dict[str, Any]:
    return {"type": stream.stream_type.value, "layers": [layer_to_dict(l) for l in stream.layers]}


def genome_to_dict(genome: Genome) -> Dict[str, Any]:
    return {
        "meta": genome.meta.value,
        "channel_scale": genome.channel_scale,
        "stem": [layer_to_dict(l) for l in genome.stem],
        "modules": [
            {
                "repeats": m.repeats,
                "out_channels": m.total_out_channels,
                "streams": [stream_to_dict(s) for s in m.streams],
            }
            for m in genome.modules
        ],
    }


def serialize_genome(genome: Genome) -> str:
    """Serializes a genome to a newline-terminated JSON document."""
    return json.dumps(genome_to_dict(genome)) + "\n"


def genome_digest(genome: Genome) -> str:
    """SHA-256 hex digest of the serialized genome."""
    return hashlib.sha256(serialize_genome(genome).encode("utf-8")).hexdigest()


def _require_object(value: Any, path: str, keys: List[str]) -> Dict[str, Any]:
    if not isinstance(value, dict):
        raise GenomeParseError(path, "expected an object")
    for key in keys:
        if key not in value:
            raise GenomeParseError(f"{path}.{key}" if path else key, "missing required field")
    unknown = sorted(set(value) - set(keys))
    if unknown:
        raise GenomeParseError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")
    return value


def _require_int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise GenomeParseError(path, f"expected an integer, got {value!r}")
    return value


def _require_list(value: Any, path: str) -> List[Any]:
    if not isinstance(value, list):
        raise GenomeParseError(path, "expected a list")
    return value


def _require_enum(value: Any, path: str, enum_type: Type[Enum]):
    try:
        return enum_type(value)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_type)
        raise GenomeParseError(path, f"unknown value {value!r} (expected one of: {allowed})")


def layer_from_dict(data: Any, path: str) -> LayerSpec:
    obj = _require_object(data, path, ["kind", "t", "c"])
    return LayerSpec(
        _require_enum(obj["kind"], f"{path}.kind", LayerKind),
        _require_int(obj["t"], f"{path}.t"),
        _require_int(obj["c"], f"{path}.c"),
    )


def stream_from_dict(data: Any, path: str) -> StreamSpec:
    obj = _require_object(data, path, ["type", "layers"])
    layers = _require_list(obj["layers"], f"{path}.layers")
    return StreamSpec(
        _require_enum(obj["type"], f"{path}.type", StreamType),
        tuple(layer_from_dict(l, f"{path}.layers[{i}]") for i, l in enumerate(layers)),
    )


def genome_from_dict(data: Any, constraints: Optional[SearchConstraints] = None) -> Genome:
    """Builds and validates a genome from its schema dictionary."""
    obj = _require_object(data, "", ["meta", "channel_scale", "stem", "modules"])
    meta = _require_enum(obj["meta"], "meta", MetaKind)
    scale = obj["channel_scale"]
    if isinstance(scale, bool) or not isinstance(scale, (int, float)):
        raise GenomeParseError("channel_scale", f"expected a number, got {scale!r}")

    stem = tuple(
        layer_from_dict(l, f"stem[{i}]") for i, l in enumerate(_require_list(obj["stem"], "stem"))
    )
    modules = []
    for m, raw in enumerate(_require_list(obj["modules"], "modules")):
        path = f"modules[{m}]"
        mod = _require_object(raw, path, ["repeats", "out_channels", "streams"])
        streams = _require_list(mod["streams"], f"{path}.streams")
        modules.append(
            ModuleSpec(
                tuple(stream_from_dict(s, f"{path}.streams[{i}]") for i, s in enumerate(streams)),
                _require_int(mod["repeats"], f"{path}.repeats"),
                _require_int(mod["out_channels"], f"{path}.out_channels"),
            )
        )
    genome = Genome(meta, stem, tuple(modules), float(scale))

    report = validate(genome, constraints)
    if not report.ok:
        path, _, reason = report.violations[0].partition(": ")
        raise GenomeParseError(path, reason)
    return genome


def parse_genome(text: str, constraints: Optional[SearchConstraints] = None) -> Genome:
    """
    Parses a genome JSON document.

    Raises:
        GenomeParseError: with line/column for malformed JSON, or with the
            JSON path of the first schema or invariant violation.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise GenomeParseError("", e.msg, e.lineno, e.colno)
    return genome_from_dict(data, constraints)
