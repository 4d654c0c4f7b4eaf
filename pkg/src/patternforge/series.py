"""Time-series containers and the elementary transforms applied to them.

Everything downstream works on ``MultivariateSeries`` (a T x D float matrix
with a strictly increasing date index) or on ``Segment`` slices cut from it.
"""
from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MultivariateSeries:
    dates: tuple[dt.date, ...]
    values: np.ndarray
    channels: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "channels", tuple(self.channels))
        if len(self.dates) != values.shape[0]:
            raise DomainError(f"{len(self.dates)} dates for {values.shape[0]} rows")
        if len(self.channels) != values.shape[1] or values.shape[1] < 1:
            raise DomainError("channel names do not match the value columns")
        if np.isnan(values).any():
            raise DomainError("series contains missing values")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise DomainError(f"dates not strictly increasing at {b}")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.channels.index(name)]

    def select(self, channels: Sequence[str]) -> "MultivariateSeries":
        idx = [self.channels.index(c) for c in channels]
        return MultivariateSeries(self.dates, self.values[:, idx], tuple(channels))

    def rows(self, mask_or_slice) -> "MultivariateSeries":
        idx = np.arange(len(self))[mask_or_slice]
        return MultivariateSeries(
            tuple(self.dates[i] for i in idx), self.values[idx], self.channels
        )


@dataclass(frozen=True)
class Segment:
    source_start: int
    values: np.ndarray
    normalized: bool = False

    @property
    def length(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SmoothingConfig:
    bandwidth: float = 0.3
    kernel: str = "gaussian"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ConfigError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.kernel != "gaussian":
            raise ConfigError(f"unsupported kernel {self.kernel!r}")


def smooth_array(x: np.ndarray, bandwidth: float) -> np.ndarray:
    """Nadaraya-Watson smoothing of each column of ``x`` with a Gaussian kernel.

    Kernel weights beyond ``6 * bandwidth`` steps are dropped; the relative
    weight lost there is below exp(-18).
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[0] == 0:
        raise DomainError("cannot smooth an empty series")
    if not bandwidth > 0:
        raise DomainError("bandwidth must be > 0")
    n = x.shape[0]
    radius = min(int(math.floor(6 * bandwidth)), n - 1)
    num = np.zeros_like(x)
    den = np.zeros(n)
    for u in range(-radius, radius + 1):
        w = math.exp(-0.5 * (u / bandwidth) ** 2)
        # row t receives w * x[t + u] wherever t + u is inside the series
        lo, hi = max(0, -u), min(n, n - u)
        num[lo:hi] += w * x[lo + u : hi + u]
        den[lo:hi] += w
    out = num / den[:, None]
    return out[:, 0] if squeeze else out


def kernel_smooth(series: MultivariateSeries, cfg: SmoothingConfig) -> MultivariateSeries:
    if len(series) == 0:
        raise DomainError("cannot smooth an empty series")
    return replace(series, values=smooth_array(series.values, cfg.bandwidth))


def minmax_columns(values: np.ndarray) -> np.ndarray:
    """Per-column Min-Max scaling to [0, 1]; constant columns become 0.5."""
    v = np.asarray(values, dtype=float)
    lo = v.min(axis=0)
    span = v.max(axis=0) - lo
    flat = span <= 0
    out = (v - lo) / np.where(flat, 1.0, span)
    out[:, flat] = 0.5
    return out


def minmax_normalize(segment: Segment) -> Segment:
    return replace(segment, values=minmax_columns(segment.values), normalized=True)


def resample_columns(values: np.ndarray, target_len: int) -> np.ndarray:
    """Piecewise-linear resampling of each column onto ``target_len`` points."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    if n < 2:
        raise DomainError(f"need at least 2 steps to resample, got {n}")
    if target_len < 2:
        raise DomainError(f"target length must be >= 2, got {target_len}")
    if n == target_len:
        return v.copy()
    pos = np.linspace(0.0, n - 1, target_len)
    left = np.minimum(np.floor(pos).astype(int), n - 2)
    frac = (pos - left)[:, None]
    out = v[left] * (1.0 - frac) + v[left + 1] * frac
    out[0], out[-1] = v[0], v[-1]
    return out


def resample_linear(segment: Segment, target_len: int) -> Segment:
    return replace(segment, values=resample_columns(segment.values, target_len))


def compute_rsi(close: Sequence[float], period: int = 14) -> np.ndarray:
    """Wilder RSI. The first ``period`` entries are warm-up and set to NaN."""
    c = np.asarray(close, dtype=float)
    if period < 1:
        raise DomainError("period must be positive")
    if len(c) <= period:
        raise DomainError(f"need more than {period} prices, got {len(c)}")
    delta = np.diff(c)
    gain = np.clip(delta, 0, None)
    loss = np.clip(-delta, 0, None)
    out = np.full(len(c), np.nan)
    avg_gain = gain[:period].mean()
    avg_loss = loss[:period].mean()
    out[period] = _rsi_value(avg_gain, avg_loss)
    for i in range(period, len(delta)):
        avg_gain = (avg_gain * (period - 1) + gain[i]) / period
        avg_loss = (avg_loss * (period - 1) + loss[i]) / period
        out[i + 1] = _rsi_value(avg_gain, avg_loss)
    return out


def _rsi_value(avg_gain: float, avg_loss: float) -> float:
    if avg_loss == 0:
        return 50.0 if avg_gain == 0 else 100.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


DateRange = tuple[dt.date, dt.date]


def split_by_dates(
    series: MultivariateSeries, ranges: Sequence[DateRange]
) -> tuple[MultivariateSeries, ...]:
    """Cut ``series`` into the rows falling in each inclusive date range."""
    ranges = [(_as_date(a), _as_date(b)) for a, b in ranges]
    for a, b in ranges:
        if a > b:
            raise ConfigError(f"empty date range {a}..{b}")
    for (a0, b0), (a1, b1) in zip(ranges, ranges[1:]):
        if a1 <= b0:
            raise ConfigError(f"date ranges overlap or are unordered: {a0}..{b0} / {a1}..{b1}")
    dates = np.array(series.dates, dtype="datetime64[D]")
    parts = []
    for a, b in ranges:
        mask = (dates >= np.datetime64(a)) & (dates <= np.datetime64(b))
        if not mask.any():
            log.warning("date range %s..%s selects no rows", a, b)
        parts.append(series.rows(mask))
    return tuple(parts)


def _as_date(d) -> dt.date:
    if isinstance(d, dt.datetime):
        return d.date()
    if isinstance(d, dt.date):
        return d
    return dt.date.fromisoformat(str(d))
