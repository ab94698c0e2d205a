"""JSON run configuration: one versioned document with per-command
sections. Unknown keys and invalid values are rejected with the exact key
path so misconfigured experiments fail before any training starts.
"""

from __future__ import annotations

import dataclasses
import json
import types
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union, get_args, get_origin

from .losses import AblationFlags, LossWeights
from .synthesis import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; message starts with the offending key path."""


@dataclass
class DataConfig:
    root: str = ""
    train_split: str = "train"
    test_split: str = "test"


@dataclass
class EvalConfig:
    resize_to: int | tuple[int, int] | None = 256


@dataclass
class RunConfig:
    version: int = SCHEMA_VERSION
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    synthesis: TrainConfig = field(default_factory=TrainConfig)
    removal: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=150))
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


_SECTION_TYPES = {
    "data": DataConfig,
    "synthesis": TrainConfig,
    "removal": TrainConfig,
    "eval": EvalConfig,
    "ablation": AblationFlags,
}


def _coerce_scalar(value: Any, target: type, path: str) -> Any:
    if target is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if target is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if target is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if target is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _coerce(value: Any, target: Any, path: str) -> Any:
    if dataclasses.is_dataclass(target):
        return _build_dataclass(target, value, path)
    origin = get_origin(target)
    if origin is tuple:
        args = get_args(target)
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise ConfigError(f"{path}: expected a list of {len(args)} numbers")
        return tuple(
            _coerce_scalar(v, a, f"{path}[{i}]")
            for i, (v, a) in enumerate(zip(value, args))
        )
    if origin in (types.UnionType, Union):
        # Only used for eval resize_to: int | [h, w] | null.
        if value is None:
            return None
        if isinstance(value, (list, tuple)):
            return _coerce(value, tuple[int, int], path)
        return _coerce_scalar(value, int, path)
    if target in (float, int, bool, str):
        return _coerce_scalar(value, target, path)
    return value


def _build_dataclass(dc_type: type, value: Any, path: str) -> Any:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = sorted(set(value) - set(fields))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    kwargs = {}
    for name, raw in value.items():
        f = fields[name]
        target = f.type
        if isinstance(target, str):
            target = _resolve_annotation(dc_type, name)
        kwargs[name] = _coerce(raw, target, f"{path}.{name}" if path else name)
    try:
        return dc_type(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path or dc_type.__name__}: {exc}") from exc


def _resolve_annotation(dc_type: type, name: str) -> Any:
    import typing

    hints = typing.get_type_hints(dc_type)
    return hints.get(name, Any)


def from_dict(doc: dict) -> RunConfig:
    """Build and validate a RunConfig from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    unknown = sorted(set(doc) - {f.name for f in dataclasses.fields(RunConfig)})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"version: unsupported schema version {version!r}")
    seed = _coerce_scalar(doc.get("seed", 0), int, "seed")

    kwargs: dict[str, Any] = {"version": version, "seed": seed}
    for name, dc_type in _SECTION_TYPES.items():
        if name in doc:
            section = doc[name]
            if name == "removal" and isinstance(section, dict):
                # The removal stage trains longer by default.
                section = {"epochs": 150, **section}
            kwargs[name] = _build_dataclass(dc_type, section, name)
    cfg = RunConfig(**kwargs)
    # Per-section seeds default to the global seed unless given explicitly.
    for section_name in ("synthesis", "removal"):
        given = doc.get(section_name, {})
        if not (isinstance(given, dict) and "seed" in given):
            setattr(
                cfg,
                section_name,
                dataclasses.replace(getattr(cfg, section_name), seed=seed),
            )
    for section_name in ("synthesis", "removal"):
        try:
            getattr(cfg, section_name).validate()
        except ValueError as exc:
            raise ConfigError(f"{section_name}: {exc}") from exc
    return cfg


def load_config(path: str | Path) -> RunConfig:
    """Parse a JSON config file; an empty file means all defaults."""
    text = Path(path).read_text().strip()
    if not text:
        return from_dict({})
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return from_dict(doc)
