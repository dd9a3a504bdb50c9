"""Flat INI configuration with dotted ``section.key`` overrides.

Every key has a default; a config file only needs the values it changes.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthConfig, WindowSpec
from .errors import ConfigError
from .training import TrainConfig


@dataclass(frozen=True)
class ModelSection:
    hidden_dim: int = 32
    temporal_kernel: int = 3
    spatial_kernel: int = 3
    layers: int = 2
    grl_eta: float = 1.0


@dataclass(frozen=True)
class EvalSection:
    variant: str = "full"
    variants: tuple[str, ...] = ("full", "wo_cd", "wo_gr", "wo_idp", "wo_sl", "wo_ti", "wo_tl")
    seeds: tuple[int, ...] = (0, 1, 2)
    scenarios: tuple[str, ...] = ("workday", "holiday", "clusters", "weather")
    k_min: int = 2
    k_max: int = 6


SECTIONS = {
    "synth": SynthConfig,
    "window": WindowSpec,
    "model": ModelSection,
    "train": TrainConfig,
    "eval": EvalSection,
}


@dataclass
class Config:
    synth: SynthConfig = field(default_factory=SynthConfig)
    window: WindowSpec = field(default_factory=WindowSpec)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def as_flat(self) -> dict[str, str]:
        out = {}
        for name in SECTIONS:
            for f in dataclasses.fields(getattr(self, name)):
                out[f"{name}.{f.name}"] = _format(getattr(getattr(self, name), f.name))
        return out


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(s) for s in items)
        return type(default)(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from exc


def _apply(cfg: Config, key: str, raw: str) -> Config:
    if "." not in key:
        raise ConfigError(f"override key {key!r} must look like section.key")
    section, name = key.split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    current = getattr(cfg, section)
    names = {f.name for f in dataclasses.fields(current)}
    if name not in names:
        raise ConfigError(f"unknown config key {key!r}")
    value = _coerce(raw, getattr(current, name), key)
    return dataclasses.replace(cfg, **{section: dataclasses.replace(current, **{name: value})})


def load_config(path=None, overrides=()) -> Config:
    """Defaults, then the file at ``path`` (if given), then ``key=value`` overrides."""
    cfg = Config()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            for name, raw in parser[section].items():
                cfg = _apply(cfg, f"{section}.{name}", raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be key=value")
        key, raw = item.split("=", 1)
        cfg = _apply(cfg, key.strip(), raw)
    cfg.synth.validate()
    cfg.train.validate()
    return cfg


def write_config(cfg: Config, path) -> None:
    parser = configparser.ConfigParser()
    for name in SECTIONS:
        parser[name] = {f.name: _format(getattr(getattr(cfg, name), f.name))
                        for f in dataclasses.fields(getattr(cfg, name))}
    with open(path, "w") as fh:
        parser.write(fh)
