"""
Loading of run configuration files.

A run config is a JSON object with the optional sections "evolution",
"constraints", "train", "data" and "surrogate", plus "output_dir". Each
section maps onto its dataclass; missing keys take the dataclass defaults
and unknown keys are rejected.
"""
import json
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

from src.errors import ConfigError
from src.evolution.search import EvolutionConfig
from src.search_space.space import LayerKind, MetaKind, SearchConstraints
from src.trainer.fitness import SurrogateConfig
from src.trainer.toy_video import ToyVideoSpec
from src.trainer.training import TrainConfig

SECTIONS = {
    "evolution": EvolutionConfig,
    "constraints": SearchConstraints,
    "train": TrainConfig,
    "data": ToyVideoSpec,
    "surrogate": SurrogateConfig,
}
TOP_LEVEL_KEYS = set(SECTIONS) | {"output_dir"}

# Fields that need more than a scalar type check.
ENUM_FIELDS = {("evolution", "meta"): MetaKind}
KIND_SET_FIELDS = {("constraints", "conv_kinds"), ("constraints", "pool_kinds")}
INT_SET_FIELDS = {("constraints", "allowed_temporal_lens")}
OPTIONAL_FLOAT_FIELDS = {("evolution", "channel_scale")}


@dataclass
class RunConfig:
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    constraints: SearchConstraints = field(default_factory=SearchConstraints)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: ToyVideoSpec = field(default_factory=ToyVideoSpec)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    output_dir: Optional[str] = None


def load_json_file(file_path: Path) -> Any:
    """
    Loads a JSON file.

    Raises:
        ConfigError: If the text is not valid JSON (message carries line and column).
        OSError: If the file cannot be read.
    """
    with open(file_path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{file_path}: line {e.lineno}, column {e.colno}: {e.msg}")


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(section: str, name: str, value: Any, default: Any) -> Any:
    where = f"{section}.{name}"
    key = (section, name)
    if key in ENUM_FIELDS:
        try:
            return ENUM_FIELDS[key](value)
        except ValueError:
            options = [m.value for m in ENUM_FIELDS[key]]
            raise ConfigError(f"{where}: unknown value {value!r}, expected one of {options}")
    if key in KIND_SET_FIELDS or key in INT_SET_FIELDS:
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{where}: expected a non-empty list")
        if key in INT_SET_FIELDS:
            if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
                raise ConfigError(f"{where}: expected a list of integers")
            return frozenset(value)
        try:
            return frozenset(LayerKind(v) for v in value)
        except ValueError:
            raise ConfigError(f"{where}: unknown layer kind in {value!r}")
    if key in OPTIONAL_FLOAT_FIELDS:
        if value is None:
            return None
        if not _is_number(value):
            raise ConfigError(f"{where}: expected a number or null")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false")
        return value
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if not _is_number(value) or not math.isfinite(value):
            raise ConfigError(f"{where}: expected a finite number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict) or not all(_is_number(v) for v in value.values()):
            raise ConfigError(f"{where}: expected an object of numbers")
        merged = dict(default)
        merged.update({k: float(v) for k, v in value.items()})
        return merged
    raise ConfigError(f"{where}: unsupported field")


def _build_section(section: str, data: Any):
    cls = SECTIONS[section]
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object")
    defaults = cls()
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {unknown}")
    values = {name: _coerce(section, name, value, getattr(defaults, name)) for name, value in data.items()}
    try:
        built = cls(**values)
        if hasattr(built, "validate"):
            built.validate()
    except ValueError as e:
        raise ConfigError(f"{section}: {e}")
    return built


def parse_run_config(document: Any) -> RunConfig:
    if not isinstance(document, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = sorted(set(document) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}")
    output_dir = document.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir: expected a string")
    sections = {name: _build_section(name, document.get(name, {})) for name in SECTIONS}
    return RunConfig(output_dir=output_dir, **sections)


def load_run_config(path: Path) -> RunConfig:
    return parse_run_config(load_json_file(path))


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (set, frozenset)):
        return sorted(_plain(v) for v in value)
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def resolved_document(config: RunConfig) -> Dict[str, Any]:
    """The fully resolved config as a JSON-ready document (every default filled in)."""
    document = {name: _plain(asdict(getattr(config, name))) for name in SECTIONS}
    document["output_dir"] = config.output_dir
    return document
