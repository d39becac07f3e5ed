"""Structured-text run configuration.

The format is sectioned key/value text:

    [cluster]
    downsample_ratio = 1/64
    sampler = topk-random

    [module]
    layers = 1
    noise_cancel = true

Every key has a default; parsing an empty string yields the default
configuration, and parse/serialize round-trips are identities.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from fractions import Fraction

from .clustering import ClusterConfig
from .grid import DEGREE_EPS


class ConfigError(ValueError):
    """Unparseable configuration text or unknown keys."""


@dataclass(frozen=True)
class ModuleSettings:
    """Grouped-convolution module hyper-parameters."""

    layers: int = 1
    degree_eps: float = DEGREE_EPS
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    noise_cancel: bool = True
    max_direction: bool = True

    def __post_init__(self) -> None:
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if self.degree_eps <= 0 or self.bn_eps <= 0:
            raise ConfigError("eps values must be positive")
        if not 0 <= self.bn_momentum <= 1:
            raise ConfigError("bn_momentum must be in [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    cluster: ClusterConfig = ClusterConfig()
    module: ModuleSettings = ModuleSettings()


_SECTIONS = ("cluster", "module")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, target_type):
    if target_type is bool:
        if text == "true":
            return True
        if text == "false":
            return False
        raise ConfigError(f"expected true/false, got {text!r}")
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    if target_type is Fraction:
        return Fraction(text)
    return text


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str) -> RunConfig:
    values: dict[str, dict[str, str]] = {name: {} for name in _SECTIONS}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in values:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, _, value = line.partition("=")
        values[section][key.strip()] = value.strip()

    defaults = RunConfig()
    built = {}
    for section, cls in (("cluster", ClusterConfig), ("module", ModuleSettings)):
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw_value in values[section].items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            target = type(getattr(getattr(defaults, section), key))
            try:
                kwargs[key] = _parse_value(raw_value, target)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw_value!r}") from exc
        try:
            built[section] = replace(getattr(defaults, section), **kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return RunConfig(**built)


def read_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def write_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
