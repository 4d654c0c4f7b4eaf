"""Fixed-horizon trading protocol, directional metrics and confusion matrices.

Every ``interval`` days of the test period a window of the previous
``window`` days is classified. Surviving predictions open a unit-notional
position in the direction implied by the predicted pattern's tail, closed
``interval`` days later. Net return subtracts the fee at entry and exit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DomainError

LONG, SHORT = 1, -1


@dataclass(frozen=True)
class BacktestConfig:
    interval: int = 4
    window: int = 16
    fee: float = 0.001
    fee_model: str = "additive"  # or "multiplicative"
    top_x: float = 100.0
    inference_len: int = 80  # points the raw window is resampled to before featurisation
    top_x_levels: tuple[float, ...] = (20.0, 40.0, 60.0, 80.0, 100.0)

    def __post_init__(self):
        if self.interval < 1 or self.window < 2 or self.inference_len < 2:
            raise ConfigError("interval >= 1, window >= 2 and inference_len >= 2 required")
        if any(not 0 < x <= 100 for x in self.top_x_levels):
            raise ConfigError("top_x_levels must lie in (0, 100]")
        if not 0 <= self.fee < 1:
            raise ConfigError("fee must lie in [0, 1)")
        if self.fee_model not in ("additive", "multiplicative"):
            raise ConfigError(f"unknown fee model {self.fee_model!r}")
        if not 0 < self.top_x <= 100:
            raise ConfigError("top_x must lie in (0, 100]")


@dataclass(frozen=True)
class TradeRecord:
    open_index: int
    open_date: str
    direction: int  # +1 long, -1 short
    entry_price: float
    exit_price: float
    gross_return: float
    net_return: float
    pattern_label: int
    p_max: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["direction"] = "long" if self.direction == LONG else "short"
        return d


@dataclass
class MetricsReport:
    f1: float
    wlr: float | None  # None when there are no losing trades
    ar: float
    trwf: float
    n_trades: int
    wlr_infinite: bool = False
    note: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def infer_direction(centroid: np.ndarray, gamma: float, price_channel: int = 0) -> int:
    """Long iff the centroid's close ends above its value at the gamma point; ties are short."""
    close = np.asarray(centroid, dtype=float)
    close = close[:, price_channel] if close.ndim == 2 else close
    pivot = round_half_up(gamma * (len(close) - 1))
    return LONG if close[-1] > close[pivot] else SHORT


def grid_points(n: int, window: int = 16, interval: int = 4) -> list[int]:
    """Decision days t: a full window ends at t and the exit day t + interval exists."""
    if n <= window + interval:
        raise DomainError(f"series of {n} days is too short for window {window} + horizon {interval}")
    return list(range(window - 1, n - interval, interval))


def trade_returns(entry: float, exit_: float, direction: int, fee: float, fee_model: str = "additive"):
    gross = direction * (exit_ - entry) / entry
    if fee_model == "additive":
        net = gross - 2 * fee
    else:
        net = (1 + gross) * (1 - fee) ** 2 - 1
    return gross, net


def make_trade(close, dates, t, direction, interval, fee, label=-1, p_max=float("nan"), fee_model="additive"):
    entry, exit_ = float(close[t]), float(close[t + interval])
    gross, net = trade_returns(entry, exit_, direction, fee, fee_model)
    return TradeRecord(int(t), str(dates[t]), int(direction), entry, exit_, gross, net, int(label), float(p_max))


def run_protocol(
    close: Sequence[float],
    dates: Sequence,
    grid: Sequence[int],
    labels: Sequence[int],
    p_max: Sequence[float],
    directions: Mapping[int, int],
    cfg: BacktestConfig = BacktestConfig(),
) -> list[TradeRecord]:
    """Trades for every grid point whose (already filtered) label is not -1."""
    if not len(grid) == len(labels) == len(p_max):
        raise DomainError("grid, labels and p_max must align")
    trades = []
    for t, lab, pm in zip(grid, labels, p_max):
        if lab == -1:
            continue
        trades.append(make_trade(close, dates, t, directions[int(lab)], cfg.interval, cfg.fee, lab, pm, cfg.fee_model))
    return trades


def truth_directions(close: Sequence[float], trades: Sequence[TradeRecord], interval: int = 4) -> list[int]:
    """Sign of the forward ``interval``-day close change at each trade's open; zero counts as down."""
    return [LONG if close[tr.open_index + interval] > close[tr.open_index] else SHORT for tr in trades]


def _binary_f1(truth: np.ndarray, pred: np.ndarray, positive: int) -> float:
    tp = int(((pred == positive) & (truth == positive)).sum())
    fp = int(((pred == positive) & (truth != positive)).sum())
    fn = int(((pred != positive) & (truth == positive)).sum())
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def compute_metrics(trades: Sequence[TradeRecord], truth: Sequence[int]) -> MetricsReport:
    """Macro F1 over up/down, win-loss ratio, mean gross return, summed net return."""
    if not trades:
        return MetricsReport(0.0, 0.0, 0.0, 0.0, 0, note="no trades")
    pred = np.array([t.direction for t in trades])
    truth = np.asarray(truth)
    present = sorted(set(pred.tolist()) | set(truth.tolist()))
    f1 = float(np.mean([_binary_f1(truth, pred, c) for c in present]))
    gross = np.array([t.gross_return for t in trades])
    wins, losses = int((gross > 0).sum()), int((gross <= 0).sum())
    wlr, inf = (wins / losses, False) if losses else (None, True)
    trwf = math.fsum(t.net_return for t in trades)
    return MetricsReport(f1, wlr, float(gross.mean()), trwf, len(trades), wlr_infinite=inf)


def random_baseline(
    close: Sequence[float],
    dates: Sequence,
    grid: Sequence[int],
    k: int,
    seed: int,
    cfg: BacktestConfig = BacktestConfig(),
) -> list[TradeRecord]:
    """``k`` grid points drawn without replacement, coin-flip directions, same fee arithmetic."""
    if k > len(grid):
        raise DomainError(f"cannot draw {k} trades from {len(grid)} grid points")
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(len(grid), size=k, replace=False))
    dirs = rng.integers(0, 2, size=k)
    return [
        make_trade(close, dates, grid[i], LONG if d else SHORT, cfg.interval, cfg.fee, fee_model=cfg.fee_model)
        for i, d in zip(picks, dirs)
    ]


@dataclass
class ConfusionMatrix:
    labels: list[int]
    counts: np.ndarray  # rows: true label, columns: predicted label

    @property
    def column_normalized(self) -> np.ndarray:
        col = self.counts.sum(axis=0, keepdims=True)
        return np.divide(self.counts, col, out=np.zeros(self.counts.shape), where=col > 0)

    def to_json(self) -> dict:
        return {
            "labels": self.labels,
            "counts": self.counts.tolist(),
            "column_normalized": self.column_normalized.tolist(),
        }


def build_confusion(true_labels: Sequence[int], predicted: Sequence[int], labels: Sequence[int] | None = None) -> ConfusionMatrix:
    true_labels = [int(x) for x in true_labels]
    predicted = [int(x) for x in predicted]
    universe = sorted(set(labels or []) | set(true_labels) | set(predicted) | {-1})
    pos = {l: i for i, l in enumerate(universe)}
    counts = np.zeros((len(universe), len(universe)), dtype=int)
    for t, p in zip(true_labels, predicted):
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(universe, counts)


def write_trades_csv(path: str | Path, trades: Sequence[TradeRecord]) -> None:
    """Per-trade returns with the running net equity."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["open_date", "direction", "pattern_label", "p_max", "gross_return", "net_return", "equity"])
        equity = 0.0
        for t in trades:
            equity += t.net_return
            w.writerow([t.open_date, t.direction, t.pattern_label, repr(t.p_max),
                        repr(t.gross_return), repr(t.net_return), repr(equity)])
