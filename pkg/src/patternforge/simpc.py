"""SIMPC: seeded, selective, variable-length multivariate subsequence clustering.

Pipeline per run: seeded K-means++-style initialisation over normalised
``L_max`` windows, then ``iterations`` rounds of greedy non-overlapping
segmentation plus DBA centroid updates (pruning clusters smaller than
``kappa`` and replenishing), and finally closest-first merging of centroid
pairs within ``delta``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from .dtw import dba_barycenter, dtw_cost, pairwise_dtw
from .errors import ConfigError, DomainError
from .series import minmax_columns, resample_columns

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimpcConfig:
    P: int = 8
    m: int = 6
    delta: float = 2.3
    kappa: int = 40
    L_min: int = 18
    L_max: int = 22
    iterations: int = 5
    ref_len: int = 20
    stride_unassigned: int = 1
    dtw_normalize: bool = False
    dba_max_iter: int = 10
    dba_tol: float = 1e-4
    dba_update: str = "median"

    def __post_init__(self):
        if not 0 <= self.m <= self.P:
            raise ConfigError(f"need 0 <= m <= P, got m={self.m}, P={self.P}")
        if not 2 <= self.L_min <= self.L_max:
            raise ConfigError(f"need 2 <= L_min <= L_max, got {self.L_min}, {self.L_max}")
        if not self.delta > 0:
            raise ConfigError("delta must be > 0")
        if self.kappa < 1 or self.iterations < 1 or self.stride_unassigned < 1:
            raise ConfigError("kappa, iterations and stride_unassigned must be >= 1")
        if self.ref_len < 2:
            raise ConfigError("ref_len must be >= 2")


@dataclass(frozen=True)
class Assignment:
    start: int
    length: int
    cluster: int
    distance: float


@dataclass
class ClusterSet:
    centroids: list[np.ndarray]
    members: list[list[tuple[int, int]]]
    diagnostics: dict = field(default_factory=dict)

    @property
    def P_prime(self) -> int:
        return len(self.centroids)

    def labels(self) -> list[tuple[int, int, int]]:
        """(start, length, label) for every member, ordered by start."""
        out = [(s, l, k) for k, mem in enumerate(self.members) for s, l in mem]
        return sorted(out)


def scale_delta(delta_base: float, D: int) -> float:
    """Threshold for ``D`` input channels given the 3-channel base value.

    D = 1, 2, 3 follow the fixed table delta/sqrt(3), delta/sqrt(2), delta;
    larger D extrapolate as delta * sqrt(D / 3).
    """
    if D < 1:
        raise DomainError(f"dimension must be >= 1, got {D}")
    table = {1: delta_base / math.sqrt(3), 2: delta_base / math.sqrt(2), 3: delta_base}
    return table.get(D, delta_base * math.sqrt(D / 3))


@nb.njit(cache=True)
def _minmax(w):
    out = np.empty_like(w)
    for c in range(w.shape[1]):
        lo = w[0, c]
        hi = w[0, c]
        for i in range(w.shape[0]):
            if w[i, c] < lo:
                lo = w[i, c]
            if w[i, c] > hi:
                hi = w[i, c]
        span = hi - lo
        for i in range(w.shape[0]):
            out[i, c] = 0.5 if span <= 0 else (w[i, c] - lo) / span
    return out


@nb.njit(cache=True)
def _best_at(X, t, l_min, l_max, centroids, normalize):
    """Best (distance, centroid, length) over all windows starting at ``t``."""
    best_d, best_p, best_l = np.inf, -1, -1
    ref = centroids.shape[1]
    for l in range(l_min, l_max + 1):
        if t + l > X.shape[0]:
            break
        w = _minmax(X[t : t + l])
        for p in range(centroids.shape[0]):
            d = dtw_cost(w, centroids[p])
            if normalize:
                d = d / (l + ref)
            if d < best_d:
                best_d, best_p, best_l = d, p, l
    return best_d, best_p, best_l


@nb.njit(cache=True)
def _candidate_distances(X, starts, length, centroids, normalize):
    out = np.empty(starts.shape[0])
    ref = centroids.shape[1]
    for k in range(starts.shape[0]):
        s = starts[k]
        w = _minmax(X[s : s + length])
        best = np.inf
        for p in range(centroids.shape[0]):
            d = dtw_cost(w, centroids[p])
            if normalize:
                d = d / (length + ref)
            if d < best:
                best = d
        out[k] = best
    return out


def _stack(centroids: Sequence[np.ndarray]) -> np.ndarray:
    return np.ascontiguousarray(np.stack([np.asarray(c, dtype=float) for c in centroids]))


def normalized_window(X: np.ndarray, start: int, length: int) -> np.ndarray:
    return minmax_columns(X[start : start + length])


def weighted_draw(rng: np.random.Generator, weights: np.ndarray) -> int:
    """Index drawn with probability proportional to ``weights`` (uniform if all zero)."""
    total = float(weights.sum())
    if total <= 0:
        return int(rng.integers(len(weights)))
    u = rng.random() * total
    return int(min(np.searchsorted(np.cumsum(weights), u, side="right"), len(weights) - 1))


def init_centroids(
    X: np.ndarray,
    seeds: Sequence[np.ndarray],
    cfg: SimpcConfig,
    rng: np.random.Generator,
    excluded: set[int] | frozenset[int] = frozenset(),
) -> tuple[list[np.ndarray], list[int]]:
    """Keep ``seeds`` fixed and draw centroids until there are ``cfg.P``.

    Each draw picks a start ``s`` with probability proportional to the DTW from
    its normalised ``L_max`` window to the nearest current centroid. Returns the
    centroid list and the starts drawn.
    """
    X = np.ascontiguousarray(X, dtype=float)
    if X.shape[0] < cfg.L_max:
        raise DomainError(f"series of length {X.shape[0]} is shorter than L_max={cfg.L_max}")
    centroids = [np.asarray(s, dtype=float) for s in seeds]
    if len(centroids) > cfg.P:
        raise DomainError(f"{len(centroids)} seeds exceed P={cfg.P}")
    starts = np.array([s for s in range(X.shape[0] - cfg.L_max + 1) if s not in excluded], dtype=np.int64)
    chosen: list[int] = []
    if len(centroids) == cfg.P or len(starts) == 0:
        return centroids, chosen

    # with no centroid yet every candidate is equally likely (plain K-means++ start)
    d = np.full(len(starts), np.inf)
    if centroids:
        d = _candidate_distances(X, starts, cfg.L_max, _stack(centroids), cfg.dtw_normalize)
    available = np.ones(len(starts), dtype=bool)
    while len(centroids) < cfg.P and available.any():
        idx = np.flatnonzero(available)
        weights = np.ones(len(idx)) if np.isinf(d[idx]).all() else d[idx]
        k = idx[weighted_draw(rng, weights)]
        available[k] = False
        s = int(starts[k])
        chosen.append(s)
        new = resample_columns(normalized_window(X, s, cfg.L_max), cfg.ref_len)
        centroids.append(new)
        d = np.minimum(d, _candidate_distances(X, starts, cfg.L_max, new[None], cfg.dtw_normalize))
    return centroids, chosen


def greedy_assign_pass(X: np.ndarray, centroids: Sequence[np.ndarray], cfg: SimpcConfig) -> list[Assignment]:
    """One greedy left-to-right segmentation pass.

    At each ``t`` the best (length, centroid) pair is found; a match within
    ``delta`` is assigned and ``t`` jumps past it, otherwise ``t`` advances by
    ``stride_unassigned``. Lengths are tried ascending and centroids by index,
    first minimum wins.
    """
    if not len(centroids):
        raise DomainError("no centroids to assign against")
    X = np.ascontiguousarray(X, dtype=float)
    C = _stack(centroids)
    out = []
    t = 0
    while t + cfg.L_min <= X.shape[0]:
        d, p, l = _best_at(X, t, cfg.L_min, cfg.L_max, C, cfg.dtw_normalize)
        if p >= 0 and d <= cfg.delta:
            out.append(Assignment(t, int(l), int(p), float(d)))
            t += int(l)
        else:
            t += cfg.stride_unassigned
    return out


def _barycenter(X: np.ndarray, members: Sequence[tuple[int, int]], cfg: SimpcConfig) -> np.ndarray:
    segs = [normalized_window(X, s, l) for s, l in members]
    bary = dba_barycenter(segs, cfg.ref_len, cfg.dba_max_iter, cfg.dba_tol, cfg.dba_update)
    return minmax_columns(bary.values)


def update_centroids(
    X: np.ndarray,
    assignments: Sequence[Assignment],
    n_clusters: int,
    cfg: SimpcConfig,
    rng: np.random.Generator,
    replenish: bool = True,
) -> tuple[list[np.ndarray], list[list[tuple[int, int]]], int]:
    """Recompute centroids from a pass; drop clusters below ``kappa``.

    Returns (centroids, members of the surviving clusters, dropped count).
    Replenished centroids come last and have no members yet.
    """
    groups: list[list[tuple[int, int]]] = [[] for _ in range(n_clusters)]
    for a in assignments:
        groups[a.cluster].append((a.start, a.length))
    survivors, members = [], []
    for g in groups:
        if len(g) >= cfg.kappa:
            survivors.append(_barycenter(X, g, cfg))
            members.append(g)
    dropped = n_clusters - len(survivors)
    if replenish and len(survivors) < cfg.P:
        taken = {a.start for a in assignments}
        survivors, _ = init_centroids(X, survivors, cfg, rng, excluded=taken)
    return survivors, members, dropped


def merge_centroids(
    centroids: Sequence[np.ndarray],
    members: Sequence[Sequence[tuple[int, int]]],
    cfg: SimpcConfig,
) -> ClusterSet:
    """Merge the closest centroid pair while its DTW distance is within ``delta``.

    The merged centroid is the renormalised DBA barycenter of the two centroids
    and its member list is the union of both; it takes the lower index.
    """
    cents = [np.asarray(c, dtype=float) for c in centroids]
    mems = [sorted(m) for m in members]
    history = []
    while len(cents) > 1:
        D = pairwise_dtw(cents)
        if cfg.dtw_normalize:
            D = D / (2 * cfg.ref_len)
        np.fill_diagonal(D, np.inf)
        i, j = np.unravel_index(int(np.argmin(D)), D.shape)
        i, j = min(i, j), max(i, j)
        if D[i, j] > cfg.delta:
            break
        bary = dba_barycenter([cents[i], cents[j]], cfg.ref_len, cfg.dba_max_iter, cfg.dba_tol, cfg.dba_update)
        cents[i] = minmax_columns(bary.values)
        mems[i] = sorted(mems[i] + mems[j])
        history.append((int(i), int(j), float(D[i, j])))
        del cents[j], mems[j]
    return ClusterSet(cents, mems, {"merges": history})


def centroid_distance_summary(centroids: Sequence[np.ndarray], D: int) -> dict:
    """Average/minimum pairwise centroid DTW, raw and divided by sqrt(D)."""
    if len(centroids) < 2:
        return {"avg": None, "min": None, "avg_norm": None, "min_norm": None}
    M = pairwise_dtw(centroids)
    iu = np.triu_indices(len(centroids), 1)
    vals = M[iu]
    return {
        "avg": float(vals.mean()),
        "min": float(vals.min()),
        "avg_norm": float(vals.mean() / math.sqrt(D)),
        "min_norm": float(vals.min() / math.sqrt(D)),
        "pairwise": M.tolist(),
    }


def run_simpc(
    X: np.ndarray,
    seeds: Sequence[np.ndarray],
    cfg: SimpcConfig,
    rng: np.random.Generator,
) -> ClusterSet:
    """Full SIMPC run on a smoothed T x D matrix.

    The last iteration does not replenish: its surviving clusters, with the
    members that produced them, go straight to merging.
    """
    X = np.ascontiguousarray(X, dtype=float)
    seeds = list(seeds)[: cfg.m]
    for s in seeds:
        if s.shape != (cfg.ref_len, X.shape[1]):
            raise DomainError(f"seed shape {s.shape} != {(cfg.ref_len, X.shape[1])}")
    centroids, drawn = init_centroids(X, seeds, cfg, rng)
    iters = []
    members: list[list[tuple[int, int]]] = []
    for it in range(cfg.iterations):
        n_before = len(centroids)
        assignments = greedy_assign_pass(X, centroids, cfg)
        last = it == cfg.iterations - 1
        sizes = np.bincount([a.cluster for a in assignments], minlength=n_before).tolist()
        centroids, members, dropped = update_centroids(X, assignments, n_before, cfg, rng, replenish=not last)
        iters.append({"iteration": it, "assigned": len(assignments), "cluster_sizes": sizes, "dropped": dropped})
        log.info("SIMPC iteration %d: %d segments assigned, %d clusters dropped", it, len(assignments), dropped)
        if not centroids:
            log.warning("SIMPC: every cluster fell below kappa=%d", cfg.kappa)
            break
    pre_merge = centroid_distance_summary(centroids, X.shape[1])
    pre_merge["n_subsequences"] = sum(len(m) for m in members)
    result = merge_centroids(centroids, members, cfg)
    result.diagnostics.update({
        "iterations": iters,
        "initial_draws": drawn,
        "pre_merge": pre_merge,
        "P_prime": result.P_prime,
    })
    return result


def assign_label(window: np.ndarray, centroids: Sequence[np.ndarray], cfg: SimpcConfig) -> int:
    """SIMPC's assignment rule for one window: nearest centroid if within delta, else -1."""
    if not len(centroids):
        return -1
    w = minmax_columns(window)
    d = [dtw_cost(w, np.asarray(c, dtype=float)) for c in centroids]
    if cfg.dtw_normalize:
        d = [x / (len(w) + cfg.ref_len) for x in d]
    k = int(np.argmin(d))
    return k if d[k] <= cfg.delta else -1


def cluster_set_to_json(cs: ClusterSet) -> dict:
    return {
        "centroids": [c.tolist() for c in cs.centroids],
        "members": [[list(m) for m in mem] for mem in cs.members],
        "P_prime": cs.P_prime,
        "diagnostics": cs.diagnostics,
    }


def cluster_set_from_json(doc: dict) -> ClusterSet:
    return ClusterSet(
        [np.asarray(c, dtype=float) for c in doc["centroids"]],
        [[(int(s), int(l)) for s, l in mem] for mem in doc["members"]],
        doc.get("diagnostics", {}),
    )


def config_to_dict(cfg: SimpcConfig) -> dict:
    return asdict(cfg)
