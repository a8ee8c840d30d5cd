"""Run configuration stored as a sectioned ``key = value`` text file.

Example::

    [run]
    seed = 7
    backend = toynet

    [paths]
    data = work/data
    checkpoint = work/model.dlyr
    output = work/out

    [generate]
    count = 100
    size = 64

    [perturb]
    blur_large_sigma = 1.0, 5.0

    [train]
    iters_stage1 = 2000

Sections ``perturb``, ``train`` and ``metrics`` mirror the fields of
:class:`PerturbConfig`, :class:`TrainConfig` and :class:`MetricOptions`.
Tuples are written comma-separated and mask-kind weights as
``kind:weight`` pairs. Any key can be overridden with ``section.key=value``.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import DEFAULT_KIND_WEIGHTS, MASK_KINDS, PerturbConfig
from .metrics import MetricOptions
from .toynet import TrainConfig

BACKENDS = ("toynet", "propagation", "identity")
DEGRADE_OPS = ("opening", "closing")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class RunSection:
    seed: int = 0
    backend: str = "toynet"
    workers: int = 1


@dataclass
class PathsSection:
    data: str = "data"
    checkpoint: str = "model.dlyr"
    output: str = "out"
    sources: str = ""
    masks: str = ""


@dataclass
class GenerateSection:
    count: int = 100
    size: int = 64
    n_planes: int = 1
    kind_weights: dict = field(default_factory=lambda: dict(DEFAULT_KIND_WEIGHTS))


@dataclass
class RefineSection:
    radius: int = 5
    infer_size: int = 0
    min_fraction: float = 0.01


@dataclass
class MetricsSection(MetricOptions):
    align: bool = True


@dataclass
class SweepSection:
    enabled: bool = False
    ops: tuple = DEGRADE_OPS
    ks: tuple = (0, 3, 5, 7, 9)


SECTIONS = {
    "run": RunSection,
    "paths": PathsSection,
    "generate": GenerateSection,
    "perturb": PerturbConfig,
    "train": TrainConfig,
    "refine": RefineSection,
    "metrics": MetricsSection,
    "sweep": SweepSection,
}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    paths: PathsSection = field(default_factory=PathsSection)
    generate: GenerateSection = field(default_factory=GenerateSection)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    refine: RefineSection = field(default_factory=RefineSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def __post_init__(self):
        if self.run.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.run.backend!r}")
        if self.run.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.generate.count < 0 or self.generate.size < 8:
            raise ConfigError("generate.count must be >= 0 and generate.size >= 8")
        unknown = set(self.generate.kind_weights) - set(MASK_KINDS)
        if unknown:
            raise ConfigError(f"unknown mask kinds {sorted(unknown)}")
        if any(w < 0 for w in self.generate.kind_weights.values()) or \
                sum(self.generate.kind_weights.values()) <= 0:
            raise ConfigError("mask-kind weights must be non-negative with a positive sum")
        if any(op not in DEGRADE_OPS for op in self.sweep.ops):
            raise ConfigError(f"sweep ops must be drawn from {DEGRADE_OPS}")
        if any(k != 0 and (k < 3 or k % 2 == 0) for k in self.sweep.ks):
            raise ConfigError("sweep kernel sizes must be 0 or odd >= 3")

    def path(self, name: str) -> Path:
        return Path(getattr(self.paths, name))

    def require_paths(self, *names: str):
        """Fail if any of the named paths is missing on disk."""
        missing = [f"{n} ({getattr(self.paths, n)})" for n in names if not self.path(n).exists()]
        if missing:
            raise ConfigError("missing paths: " + ", ".join(missing))


# -- text encoding -------------------------------------------------------------

def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, dict):
        return ", ".join(f"{k}:{_format(v)}" for k, v in value.items())
    return repr(value) if isinstance(value, float) else str(value)


def _parse_scalar(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def _parse(text: str, default):
    if isinstance(default, tuple):
        items = [t for t in text.split(",") if t.strip()]
        like = default[0] if default else ""
        return tuple(_parse_scalar(t, like) for t in items)
    if isinstance(default, dict):
        out = {}
        for item in filter(str.strip, text.split(",")):
            key, sep, val = item.partition(":")
            if not sep:
                raise ValueError(f"expected key:value, got {item!r}")
            out[key.strip()] = float(val)
        return out
    return _parse_scalar(text, default)


def _section_values(cls, items: dict, section: str) -> dict:
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, text in items.items():
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
        try:
            values[key] = _parse(text, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None
    return values


def from_mapping(sections: dict[str, dict[str, str]]) -> RunConfig:
    """Build a config from ``{section: {key: text}}``."""
    parts = {}
    for section, items in sections.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        cls = SECTIONS[section]
        try:
            parts[section] = cls(**_section_values(cls, items, section))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[{section}]: {exc}") from None
    return RunConfig(**parts)


def to_mapping(cfg: RunConfig) -> dict[str, dict[str, str]]:
    out = {}
    for section in SECTIONS:
        obj = getattr(cfg, section)
        out[section] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    return out


def dumps(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(to_mapping(cfg))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads(text: str, overrides=()) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        sections.setdefault(section, {})[name] = value
    return from_mapping(sections)


def load(path, overrides=()) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, overrides)
