"""Pipeline configuration as a flat ``section.key = value`` text file.

Values are JSON literals (numbers, ``true``/``false``, quoted strings,
lists). Emitting the defaults and parsing them back is a fixed point.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .backtest import BacktestConfig
from .classifier import ClassifierConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .series import SmoothingConfig
from .simpc import SimpcConfig


@dataclass(frozen=True)
class DataConfig:
    path: str = ""  # empty: bundled synthetic market
    seed_dir: str = ""  # empty: bundled seed tickers; "none" disables prototypes
    channels: tuple[str, ...] = ("close", "volume", "rsi")
    rsi_period: int = 14

    def __post_init__(self):
        if not self.channels:
            raise ConfigError("at least one channel is required")
        if self.rsi_period < 1:
            raise ConfigError("rsi_period must be >= 1")


@dataclass(frozen=True)
class SplitConfig:
    train_start: str = "2008-01-01"
    train_end: str = "2018-12-31"
    validation_start: str = "2019-01-01"
    validation_end: str = "2021-07-30"
    test_start: str = "2021-08-01"
    test_end: str = "2025-05-13"

    def __post_init__(self):
        try:
            d = [dt.date.fromisoformat(getattr(self, f.name)) for f in dataclasses.fields(self)]
        except ValueError as exc:
            raise ConfigError(f"bad split date: {exc}") from None
        if any(b < a for a, b in zip(d, d[1:])) or d[1] >= d[2] or d[3] >= d[4]:
            raise ConfigError("split dates must be ordered train < validation < test")


@dataclass(frozen=True)
class PrototypeConfig:
    enabled: bool = True
    tolerance: float = 0.03
    min_window: int = 15
    max_window: int = 35
    smooth_bandwidth: float = 0.3
    coarse_bandwidth: float = 0.8

    def __post_init__(self):
        if not 5 <= self.min_window <= self.max_window:
            raise ConfigError("need 5 <= min_window <= max_window")


@dataclass(frozen=True)
class ShapeletSection:
    g: int = 10
    kmeans_max_iter: int = 50

    def __post_init__(self):
        if self.g < 1 or self.kmeans_max_iter < 1:
            raise ConfigError("g and kmeans_max_iter must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    threads: int = 1

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


# encoder.rng_seed is derived from run.seed, so it is not a config key.
_HIDDEN = {"encoder": {"rng_seed"}}


@dataclass(frozen=True)
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    prototypes: PrototypeConfig = field(default_factory=PrototypeConfig)
    simpc: SimpcConfig = field(default_factory=SimpcConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    shapelets: ShapeletSection = field(default_factory=ShapeletSection)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def section_dict(self, name: str) -> dict:
        sec = getattr(self, name)
        hidden = _HIDDEN.get(name, set())
        return {f.name: _plain(getattr(sec, f.name)) for f in dataclasses.fields(sec) if f.name not in hidden}

    def to_dict(self) -> dict:
        return {f.name: self.section_dict(f.name) for f in dataclasses.fields(self)}

    def with_values(self, **dotted) -> "PipelineConfig":
        """Copy with ``section__key=value`` overrides (validated like parsed values)."""
        return from_pairs([(k.replace("__", "."), v, None) for k, v in dotted.items()], base=self)


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def emit_config(cfg: PipelineConfig) -> str:
    lines = []
    for sec, values in cfg.to_dict().items():
        for key, v in values.items():
            lines.append(f"{sec}.{key} = {json.dumps(v)}")
        lines.append("")
    return "\n".join(lines)


def _coerce(where: str, value, hint):
    origin = typing.get_origin(hint)
    if origin is tuple:
        (elem, *_rest) = typing.get_args(hint)
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(_coerce(f"{where}[{i}]", v, elem) for i, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a quoted string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported field type {hint}")


def from_pairs(pairs, base: PipelineConfig | None = None) -> PipelineConfig:
    """Build a config from (dotted key, decoded value, line number) triples."""
    base = base or PipelineConfig()
    updates: dict[str, dict] = {}
    seen: dict[str, int | None] = {}
    for key, value, line in pairs:
        where = f"line {line}: {key}" if line is not None else key
        if key in seen:
            raise ConfigError(f"{where}: duplicate key")
        seen[key] = line
        sec, _, name = key.partition(".")
        if not name or not hasattr(base, sec) or sec not in {f.name for f in dataclasses.fields(base)}:
            raise ConfigError(f"{where}: unknown key")
        sec_obj = getattr(base, sec)
        hints = typing.get_type_hints(type(sec_obj))
        if name not in {f.name for f in dataclasses.fields(sec_obj)} or name in _HIDDEN.get(sec, set()):
            raise ConfigError(f"{where}: unknown key")
        updates.setdefault(sec, {})[name] = _coerce(where, value, hints[name])
    sections = {}
    for sec, vals in updates.items():
        try:
            sections[sec] = dataclasses.replace(getattr(base, sec), **vals)
        except ConfigError as exc:
            raise ConfigError(f"{sec}: {exc}") from None
    return dataclasses.replace(base, **sections)


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    pairs = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, rhs = line.partition("=")
        if not eq:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, rhs = key.strip(), rhs.strip()
        try:
            value = json.loads(rhs)
        except json.JSONDecodeError:
            raise ConfigError(f"line {n}: {key}: value {rhs!r} is not a JSON literal (quote strings)") from None
        pairs.append((key, value, n))
    return from_pairs(pairs, base)


def load_config(path: str | Path) -> PipelineConfig:
    """Read a config file; a bare name selects a bundled preset (e.g. ``synthetic``)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and "/" not in str(path):
        p = Path(__file__).parent / "data" / f"{path}.cfg"
    if not p.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(p.read_text())
