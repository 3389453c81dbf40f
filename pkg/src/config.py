"""
Run configuration: strict JSON parsing, dotted command-line overrides and
the echoed ``config.json`` of each run directory.
"""

import json
import logging
import os
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, List, Optional, Sequence, Tuple

from src.errors import ConfigError
from src.field import FieldConfig
from src.losses import LossWeights
from src.trainer import TrainConfig

logger = logging.getLogger(__name__)

GRID_FIELDS = ("phi", "r", "theta")
CONFIG_FILENAME = "config.json"

# Override prefixes that address a nested section directly.
SHORTHANDS = {
    "weights": "train.weights",
    "field": "train.field",
}

__all__ = [
    "ExtractConfig",
    "FieldConfig",
    "IOConfig",
    "LossWeights",
    "RunConfig",
    "TrainConfig",
    "apply_overrides",
    "config_from_dict",
    "echo_config",
    "load_config",
    "parse_override_args",
]


@dataclass
class ExtractConfig:
    """Dense-grid extraction and slice rendering options."""

    res: int = 128
    field: str = "phi"
    iso: float = 0.0
    mesh_format: str = "obj"
    slice_res: int = 256

    def validate(self):
        if self.res < 2 or self.slice_res < 2:
            raise ConfigError("extract.res and extract.slice_res must be >= 2")
        if self.field not in GRID_FIELDS:
            raise ConfigError(
                f"extract.field must be one of {GRID_FIELDS}, got "
                f"'{self.field}'"
            )
        if self.mesh_format not in ("obj", "ply"):
            raise ConfigError("extract.mesh_format must be 'obj' or 'ply'")


@dataclass
class IOConfig:
    input: Optional[str] = None
    output: str = "runs/mpf"


@dataclass
class RunConfig:
    """Everything one reconstruct / ablate invocation needs."""

    train: TrainConfig = field(default_factory=TrainConfig)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    io: IOConfig = field(default_factory=IOConfig)

    def validate(self):
        try:
            self.train.validate()
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        if self.train.field.composition not in ("gated", "indicator"):
            raise ConfigError(
                f"field.composition must be 'gated' or 'indicator', got "
                f"'{self.train.field.composition}'"
            )
        self.extract.validate()

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(value: Any, annotation, path: str):
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)

    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return [_coerce(v, args[0], f"{path}[{i}]")
                for i, v in enumerate(value)]
    if is_dataclass(annotation):
        return _build(annotation, value, path)
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {annotation}")


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key '{where}'")
    kwargs = {
        key: _coerce(value, hints[key], f"{path}.{key}" if path else key)
        for key, value in data.items()
    }
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    """
    Build a validated RunConfig; missing keys take their defaults.

    Raises:
        ConfigError: On unknown keys, wrong types or invalid values
    """
    config = _build(RunConfig, data, "")
    config.validate()
    return config


def load_config(path: Optional[str] = None) -> RunConfig:
    """
    Read a JSON run configuration, or the defaults when path is None.

    Raises:
        ConfigError: On malformed JSON or schema violations
        FileNotFoundError: When path does not exist
    """
    if path is None:
        return config_from_dict({})
    if not os.path.exists(path):
        raise FileNotFoundError(f"config not found: {path}")
    with open(path, "r") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    logger.info("Loaded config from %s", path)
    return config_from_dict(data)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_override_args(tokens: Sequence[str]) -> List[Tuple[str, Any]]:
    """
    Turn ``--a.b value`` / ``--a.b=value`` tokens into (path, value) pairs.

    Values are read as JSON when possible, plain strings otherwise.

    Raises:
        ConfigError: On tokens that are not dotted options
    """
    pairs = []
    i = 0
    tokens = list(tokens)
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or "." not in token:
            raise ConfigError(f"unrecognized argument '{token}'")
        key = token[2:]
        if "=" in key:
            key, text = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"option '{token}' needs a value")
            text = tokens[i + 1]
            i += 2
        pairs.append((key, _parse_value(text)))
    return pairs


def _expand(path: str) -> str:
    head, _, rest = path.partition(".")
    if head in SHORTHANDS and rest:
        return f"{SHORTHANDS[head]}.{rest}"
    return path


def apply_overrides(config: RunConfig, overrides: Sequence[Tuple[str, Any]]
                    ) -> RunConfig:
    """
    Return a new RunConfig with dotted-path overrides applied.

    Raises:
        ConfigError: On unknown paths or invalid values
    """
    data = config.to_dict()
    for raw_path, value in overrides:
        path = _expand(raw_path)
        node = data
        keys = path.split(".")
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                raise ConfigError(f"unknown config key '{path}'")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key '{path}'")
        node[keys[-1]] = value
        logger.debug("Override %s = %r", path, value)
    return config_from_dict(data)


def echo_config(config: RunConfig, run_dir: str) -> str:
    """Write the parsed configuration to ``<run_dir>/config.json``."""
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, CONFIG_FILENAME)
    with open(path, "w", newline="\n") as f:
        json.dump(config.to_dict(), f, indent=2)
        f.write("\n")
    return path
