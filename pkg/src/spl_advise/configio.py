"""Experiment config files: strict TOML parsing, override handling, and
emission of the resolved document.

The committed reference config (configs/blobs.toml) is the normative
example of the dialect. Unknown keys are rejected by name; every run writes
its fully-resolved config next to its outputs, and re-running from that file
reproduces the run in single-threaded mode.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .training import (
    DatasetConfig,
    EmbeddingConfig,
    PaceConfig,
    RunConfig,
    SamplerConfig,
    StudentConfig,
    TrainConfig,
)

SECTIONS = {
    "dataset": DatasetConfig,
    "embedding": EmbeddingConfig,
    "student": StudentConfig,
    "pace": PaceConfig,
    "sampler": SamplerConfig,
    "run": RunConfig,
}
TOP_LEVEL_SCALARS = ("name", "seed", "parallel")


class ConfigError(ValueError):
    pass


def _coerce(value, default, where: str):
    """Coerce a TOML value to the type of a field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    raise ConfigError(f"{where}: unsupported value {value!r}")


def _build_section(cls, doc: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        default = _field_default(fields[key])
        kwargs[key] = _coerce(value, default, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def _field_default(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def parse_config(doc: dict, source: str = "config") -> TrainConfig:
    """Build a TrainConfig from a parsed document, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: expected a table at top level")
    unknown = sorted(set(doc) - set(SECTIONS) - set(TOP_LEVEL_SCALARS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {}
    if "name" in doc:
        kwargs["name"] = _coerce(doc["name"], "", "name")
    if "seed" in doc:
        kwargs["seed"] = _coerce(doc["seed"], 0, "seed")
    if "parallel" in doc:
        value = doc["parallel"]
        if isinstance(value, str):
            if value not in ("on", "off"):
                raise ConfigError(f"parallel: expected on|off, got {value!r}")
            value = value == "on"
        kwargs["parallel"] = _coerce(value, False, "parallel")
    for section, cls in SECTIONS.items():
        if section in doc:
            if not isinstance(doc[section], dict):
                raise ConfigError(f"[{section}] must be a table")
            kwargs[section] = _build_section(cls, doc[section], section)
    config = TrainConfig(**kwargs)
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, str(path))


def load_config_doc(path) -> dict:
    """Raw document for shipping to the service; validated there."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_override(text: str) -> tuple[list[str], object]:
    """Parse one ``section.key=value`` override; the value uses TOML syntax
    (bare words fall back to strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.split("."), value


def apply_overrides(doc: dict, overrides) -> dict:
    """Return a copy of `doc` with each ``a.b=value`` override applied."""
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in doc.items()}
    for text in overrides:
        path, value = parse_override(text)
        node = out
        for part in path[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(
                    f"override {text!r}: {part!r} is not a table"
                )
            node = nxt
        node[path[-1]] = value
    return out


def config_to_doc(config: TrainConfig) -> dict:
    """Fully-resolved plain document (defaults plus everything set)."""
    doc = {
        "name": config.name,
        "seed": config.seed,
        "parallel": config.parallel,
    }
    for section, cls in SECTIONS.items():
        obj = getattr(config, section)
        doc[section] = {
            f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(cls)
        }
    return doc


def _plain(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = repr(value)
        # TOML floats need a decimal point or exponent.
        if text.isdigit() or (text[0] == "-" and text[1:].isdigit()):
            text += ".0"
        return text
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {value!r}")


def resolved_toml(config: TrainConfig) -> str:
    """Deterministic TOML text of the resolved config; parsing it back gives
    an identical TrainConfig."""
    doc = config_to_doc(config)
    lines = [f"{key} = {_toml_value(doc[key])}" for key in TOP_LEVEL_SCALARS]
    for section in SECTIONS:
        lines.append("")
        lines.append(f"[{section}]")
        lines.extend(
            f"{key} = {_toml_value(val)}" for key, val in doc[section].items()
        )
    return "\n".join(lines) + "\n"
