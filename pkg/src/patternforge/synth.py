"""Synthetic data: planted multivariate motifs and a desk-scale market dataset."""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Three 3-channel motif families on normalised time u in [0, 1]; knots are
# (u, value) pairs for close, volume and an oscillator channel.
FAMILY_KNOTS = [
    (  # double hump in price, volume building, oscillator rolling over
        [(0, 0.1), (0.25, 0.9), (0.45, 0.4), (0.7, 1.0), (1, 0.0)],
        [(0, 0.0), (0.6, 0.6), (1, 1.0)],
        [(0, 0.5), (0.3, 1.0), (0.7, 0.2), (1, 0.4)],
    ),
    (  # V-shaped selloff and recovery with a volume spike at the low
        [(0, 1.0), (0.5, 0.0), (1, 0.85)],
        [(0, 0.1), (0.45, 1.0), (0.7, 0.3), (1, 0.2)],
        [(0, 0.8), (0.5, 0.0), (1, 1.0)],
    ),
    (  # ramp then plateau, fading volume
        [(0, 0.0), (0.55, 1.0), (1, 0.9)],
        [(0, 1.0), (0.5, 0.4), (1, 0.0)],
        [(0, 0.0), (0.4, 1.0), (1, 0.6)],
    ),
]


def family_curve(family: int, u: np.ndarray) -> np.ndarray:
    cols = []
    for knots in FAMILY_KNOTS[family]:
        ku, kv = zip(*knots)
        cols.append(np.interp(u, ku, kv))
    return np.column_stack(cols)


def _warped_grid(n: int, warp: float, rng: np.random.Generator) -> np.ndarray:
    """Monotone grid on [0, 1] whose interior is shifted by up to ``warp``."""
    s = np.linspace(0.0, 1.0, n)
    amp = rng.uniform(-warp, warp)
    bend = amp * np.sin(np.pi * s) / np.pi * 2
    return np.clip(s + bend * (1 - np.abs(2 * amp)), 0, 1)


@dataclass
class PlantedSeries:
    values: np.ndarray
    occurrences: list[tuple[int, int, int]]  # (start, length, family)

    def label_segment(self, start: int, length: int) -> int:
        """Family of the occurrence covering most of the segment; -1 if none covers half."""
        best, best_ov = -1, 0
        for s, l, f in self.occurrences:
            ov = min(start + length, s + l) - max(start, s)
            if ov > best_ov:
                best, best_ov = f, ov
        return best if best_ov * 2 >= length else -1


def planted_motif_series(
    T: int = 2000,
    n_families: int = 3,
    base_len: int = 20,
    amplitude: float = 0.2,
    warp: float = 0.1,
    noise: float = 0.05,
    max_gap: int = 4,
    seed: int = 0,
) -> PlantedSeries:
    """Back-to-back motif occurrences separated by short noisy gaps.

    Each occurrence has length ``base_len`` scaled by a factor in
    [1 - warp, 1 + warp], a non-uniform time warp of similar size, amplitude
    scaled by a factor in [1 - amplitude, 1 + amplitude], and Gaussian noise of
    standard deviation ``noise`` on every channel. The close channel is kept
    continuous across occurrences.
    """
    rng = np.random.default_rng(seed)
    rows: list[np.ndarray] = []
    occ = []
    t = 0
    level = 0.0
    while True:
        gap = int(rng.integers(0, max_gap + 1))
        length = int(round(base_len * rng.uniform(1 - warp, 1 + warp)))
        if t + gap + length > T:
            break
        if gap:
            g = np.zeros((gap, 3))
            g[:, 0] = level
            g[:, 1:] = 0.5
            rows.append(g + rng.normal(0, noise, g.shape))
            t += gap
        fam = int(rng.integers(n_families))
        scale = rng.uniform(1 - amplitude, 1 + amplitude)
        curve = family_curve(fam, _warped_grid(length, warp, rng)) * scale
        curve[:, 0] += level - curve[0, 0]
        level = curve[-1, 0]
        rows.append(curve + rng.normal(0, noise, curve.shape))
        occ.append((t, length, fam))
        t += length
    tail = T - t
    if tail:
        g = np.zeros((tail, 3))
        g[:, 0] = level
        g[:, 1:] = 0.5
        rows.append(g + rng.normal(0, noise, g.shape))
    return PlantedSeries(np.vstack(rows), occ)


def cluster_purity(labels_per_cluster: list[list[int]]) -> float:
    """Fraction of assigned segments that carry their cluster's majority label."""
    total = sum(len(x) for x in labels_per_cluster)
    if total == 0:
        return 0.0
    hit = sum(np.bincount(np.asarray(x) + 1).max() for x in labels_per_cluster if x)
    return hit / total


def business_days(start: str, end: str) -> list[dt.date]:
    d, stop = dt.date.fromisoformat(start), dt.date.fromisoformat(end)
    out = []
    while d <= stop:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


@dataclass
class MarketData:
    dates: list[dt.date]
    close: np.ndarray
    volume: np.ndarray
    occurrences: list[tuple[int, int, int]]  # (start, length, family)


def synthetic_market(
    start: str = "2007-10-01",
    end: str = "2025-05-13",
    families: tuple[int, ...] = (0, 1),
    family_weights: tuple[float, ...] | None = None,
    amplitude: float = 0.08,
    gap_prob: float = 0.15,
    max_gap: int = 6,
    warp: float = 0.1,
    rw_vol: float = 0.01,
    motif_noise: float = 0.001,
    volume_noise: float = 0.01,
    seed: int = 0,
) -> MarketData:
    """Daily close/volume built from recurring motifs separated by random-walk stretches.

    Motifs are the planted families applied to log-price (scaled by
    ``amplitude``, +-20%) and to volume, with the same length/warp jitter as
    ``planted_motif_series``.
    """
    rng = np.random.default_rng(seed)
    dates = business_days(start, end)
    T = len(dates)
    logp = np.empty(T)
    vol = np.empty(T)
    occ = []
    t, level = 0, np.log(100.0)
    weights = np.ones(len(families)) if family_weights is None else np.asarray(family_weights, dtype=float)
    weights = weights / weights.sum()
    while t < T:
        if rng.random() < gap_prob:
            n = min(int(rng.integers(1, max_gap + 1)), T - t)
            logp[t : t + n] = level + np.cumsum(rng.normal(0, rw_vol, n))
            vol[t : t + n] = 0.5
            level = logp[t + n - 1]
            t += n
            if t >= T:
                break
        fam = int(families[rng.choice(len(weights), p=weights)])
        length = int(round(20 * rng.uniform(1 - warp, 1 + warp)))
        if t + length > T:
            logp[t:] = level
            vol[t:] = 0.5
            break
        curve = family_curve(fam, _warped_grid(length, warp, rng))
        a = amplitude * rng.uniform(0.8, 1.2)
        path = level + a * (curve[:, 0] - curve[0, 0]) + rng.normal(0, motif_noise, length)
        logp[t : t + length] = path
        vol[t : t + length] = curve[:, 1]
        level = path[-1]
        occ.append((t, length, fam))
        t += length
    volume = 1e6 * (1 + 2 * vol) * np.exp(rng.normal(0, volume_noise, T))
    return MarketData(dates, np.exp(logp), np.round(volume), occ)


def random_walk_market(n: int, start: str = "2008-01-01", vol: float = 0.015, seed: int = 0) -> MarketData:
    """Plain geometric random walk with lognormal volume (chart-pattern seed data)."""
    rng = np.random.default_rng(seed)
    dates = business_days(start, "2100-01-01")[:n]
    close = 50.0 * np.exp(np.cumsum(rng.normal(0, vol, n)))
    volume = np.round(1e6 * np.exp(rng.normal(0, 0.3, n)))
    return MarketData(dates, close, volume, [])


def write_market_csv(path: str | Path, data: MarketData, seed: int = 0) -> None:
    """``date,open,high,low,close,volume`` rows; open is the previous close, high/low bracket both."""
    rng = np.random.default_rng(seed)
    close = data.close
    opens = np.concatenate([close[:1], close[:-1]])
    span = np.abs(rng.normal(0, 0.003, (2, len(close))))
    high = np.maximum(opens, close) * (1 + span[0])
    low = np.minimum(opens, close) * (1 - span[1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "open", "high", "low", "close", "volume"])
        for row in zip(data.dates, opens, high, low, close, data.volume):
            w.writerow([row[0].isoformat(), *(f"{v:.4f}" for v in row[1:5]), f"{row[5]:.0f}"])


SEED_TICKERS = ("SEEDA", "SEEDB", "SEEDC")


def write_bundle(out_dir: str | Path, seed: int = 0) -> Path:
    """Write ``market.csv`` plus random-walk seed tickers under ``seed/``."""
    out = Path(out_dir)
    (out / "seed").mkdir(parents=True, exist_ok=True)
    write_market_csv(out / "market.csv", synthetic_market(seed=seed), seed=seed)
    for k, name in enumerate(SEED_TICKERS):
        walk = random_walk_market(2000, seed=1000 * (seed + 1) + k)
        write_market_csv(out / "seed" / f"{name}.csv", walk, seed=seed + k)
    return out
