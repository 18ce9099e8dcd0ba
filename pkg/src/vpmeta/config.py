"""Run configuration as flat ``section.key = value`` text.

Every default matches the simulation hyperparameters used by the method
(alpha = pi/8, local and meta rates 0.1, adaptation rate 0.001, 10 tasks per
meta step, 200 meta iterations, 100 ms ticks, 100-tick windows).
"""

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .meta import MetaConfig
from .seqmodel import ArchSpec
from .sim import ViewportConfig

OUTPUT_ENV = "VPMETA_OUTPUT_DIR"


def _require(ok, message):
    if not ok:
        raise ValueError(message)


@dataclass(frozen=True)
class PathsConfig:
    output: str = "vpmeta-out"
    traces: str = ""
    checkpoints: str = ""


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 128
    cell: str = "lstm"

    def __post_init__(self):
        _require(self.hidden_dim >= 1, "hidden_dim must be >= 1")
        _require(self.cell in ("lstm", "linear"), "cell must be 'lstm' or 'linear'")


@dataclass(frozen=True)
class DataConfig:
    tick_seconds: float = 0.1
    sequence_length: int = 100
    column_map: str = "none"  # "none" or "dataset"

    def __post_init__(self):
        _require(self.tick_seconds > 0, "tick_seconds must be > 0")
        _require(self.sequence_length >= 1, "sequence_length must be >= 1")
        _require(self.column_map in ("none", "dataset"), "column_map must be 'none' or 'dataset'")


@dataclass(frozen=True)
class SimConfig:
    modes: str = "full,partial,frozen"
    partial_window: int = 1200
    tile_mode: bool = False
    tile_rows: int = 16
    tile_cols: int = 16
    baselines: bool = False
    knn_k: int = 3

    def __post_init__(self):
        _require(self.partial_window >= 0, "partial_window must be >= 0")
        _require(self.tile_rows >= 1 and self.tile_cols >= 1, "tile grid must be at least 1x1")
        _require(self.knn_k >= 1, "knn_k must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    leave_one_out: bool = True
    per_user_models: bool = False


@dataclass(frozen=True)
class CohortConfig:
    fixate: int = 2
    smooth_scan: int = 2
    random_walk: int = 0
    regime_switching: int = 4
    videos: int = 1
    duration: float = 300.0
    noise: float = 0.02
    scan_velocity: float = 0.3
    walk_velocity: float = 0.6
    anchor_spread: float = 0.3

    def __post_init__(self):
        counts = (self.fixate, self.smooth_scan, self.random_walk, self.regime_switching)
        _require(min(counts) >= 0 and sum(counts) >= 1, "cohort needs at least one user")
        _require(self.videos >= 1, "videos must be >= 1")
        _require(self.duration > 0, "duration must be > 0")
        _require(min(self.noise, self.scan_velocity, self.walk_velocity, self.anchor_spread) >= 0,
                 "cohort noise, velocities and spread must be >= 0")


@dataclass(frozen=True)
class FlopsConfig:
    battery_joules: float = 50400.0
    joules_per_flop: float = 1.18e-11

    def __post_init__(self):
        _require(self.battery_joules >= 0 and self.joules_per_flop > 0,
                 "battery_joules must be >= 0 and joules_per_flop > 0")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    viewport: ViewportConfig = field(default_factory=ViewportConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    vd: ModelConfig = field(default_factory=ModelConfig)
    pa: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cohort: CohortConfig = field(default_factory=CohortConfig)
    flops: FlopsConfig = field(default_factory=FlopsConfig)

    def __post_init__(self):
        _require(self.workers >= 1, "workers must be >= 1")

    @classmethod
    def emulation(cls):
        """Coarse prototype settings: 1 s ticks, 20-tick windows, 16x16 tiles."""
        return cls(
            data=DataConfig(tick_seconds=1.0, sequence_length=20),
            sim=SimConfig(tile_mode=True),
        )

    def vd_arch(self):
        return ArchSpec(3, self.vd.hidden_dim, 3, self.data.sequence_length, self.vd.cell)

    def pa_arch(self):
        return ArchSpec(1, self.pa.hidden_dim, 1, self.data.sequence_length, self.pa.cell)

    def modes(self):
        return [m.strip() for m in self.sim.modes.split(",") if m.strip()]

    def output_dir(self):
        return Path(os.environ.get(OUTPUT_ENV) or self.paths.output)

    def traces_dir(self):
        return Path(self.paths.traces) if self.paths.traces else self.output_dir() / "traces"

    def checkpoints_dir(self):
        return Path(self.paths.checkpoints) if self.paths.checkpoints else self.output_dir() / "checkpoints"

    def records_dir(self):
        return self.output_dir() / "records"

    def reports_dir(self):
        return self.output_dir() / "reports"


_SECTIONS = {f.name for f in fields(RunConfig) if f.default_factory is not dataclasses.MISSING}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(raw, typ, key):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def emit_config(cfg):
    lines = ["# vpmeta run configuration"]
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for sub in fields(value):
                lines.append(f"{f.name}.{sub.name} = {_format(getattr(value, sub.name))}")
        else:
            lines.append(f"{f.name} = {_format(value)}")
    return "\n".join(lines) + "\n"


def parse_config(text, base=None):
    """Parse config text on top of ``base`` (default: all defaults).

    Blank lines and lines starting with ``#`` are ignored; values are taken
    verbatim after trimming surrounding whitespace.
    """
    overrides = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        overrides[key] = value
    return apply_overrides(base or RunConfig(), overrides)


def apply_overrides(cfg, overrides):
    """Return ``cfg`` with ``{"section.key": "text"}`` overrides applied."""
    top = {f.name: f for f in fields(cfg)}
    section_updates = {}
    top_updates = {}
    for key, raw in overrides.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section {section!r}")
            sub = {f.name: f for f in fields(getattr(cfg, section))}
            if name not in sub:
                raise ConfigError(f"unknown key {key!r}")
            section_updates.setdefault(section, {})[name] = _convert(str(raw), sub[name].type, key)
        else:
            if key not in top or key in _SECTIONS:
                raise ConfigError(f"unknown key {key!r}")
            top_updates[key] = _convert(str(raw), top[key].type, key)
    try:
        for section, upd in section_updates.items():
            top_updates[section] = dataclasses.replace(getattr(cfg, section), **upd)
        return dataclasses.replace(cfg, **top_updates)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, base=None):
    if path is None:
        return base or RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base)
