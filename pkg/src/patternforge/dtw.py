"""Dependent multivariate DTW, DTW barycenter averaging and warping helpers.

Local cost is the Euclidean norm of the difference between two frames taken
over all channels at once; the distance is the raw accumulated cost along the
optimal path (no square root, no path-length normalisation unless asked).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np

from .errors import DomainError
from .series import resample_columns

log = logging.getLogger(__name__)

_jit = nb.njit(cache=True, nogil=True)


@_jit
def _local(a, b, i, j):
    s = 0.0
    for d in range(a.shape[1]):
        diff = a[i, d] - b[j, d]
        s += diff * diff
    return np.sqrt(s)


@_jit
def _accumulate(a, b):
    n, m = a.shape[0], b.shape[0]
    acc = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            c = _local(a, b, i, j)
            if i == 0 and j == 0:
                acc[i, j] = c
            elif i == 0:
                acc[i, j] = c + acc[i, j - 1]
            elif j == 0:
                acc[i, j] = c + acc[i - 1, j]
            else:
                best = acc[i - 1, j - 1]
                if acc[i - 1, j] < best:
                    best = acc[i - 1, j]
                if acc[i, j - 1] < best:
                    best = acc[i, j - 1]
                acc[i, j] = c + best
    return acc


@_jit
def dtw_cost(a, b):
    """Accumulated DTW cost only; O(len(b)) memory. Inputs must be 2-D float."""
    n, m = a.shape[0], b.shape[0]
    prev = np.empty(m)
    cur = np.empty(m)
    for i in range(n):
        for j in range(m):
            c = _local(a, b, i, j)
            if i == 0 and j == 0:
                cur[j] = c
            elif i == 0:
                cur[j] = c + cur[j - 1]
            elif j == 0:
                cur[j] = c + prev[j]
            else:
                best = prev[j - 1]
                if prev[j] < best:
                    best = prev[j]
                if cur[j - 1] < best:
                    best = cur[j - 1]
                cur[j] = c + best
        prev, cur = cur, prev
    return prev[m - 1]


@_jit
def _backtrack(acc):
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    out = np.empty((acc.shape[0] + acc.shape[1], 2), dtype=np.int64)
    k = 0
    out[k, 0], out[k, 1] = i, j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            # ties: diagonal, then vertical, then horizontal
            if diag <= up and diag <= left:
                i, j = i - 1, j - 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        k += 1
        out[k, 0], out[k, 1] = i, j
    return out[: k + 1][::-1].copy()


@_jit
def _match_centroids(window, centroids):
    """DTW from one window to each of a stack of equal-length centroids."""
    out = np.empty(centroids.shape[0])
    for p in range(centroids.shape[0]):
        out[p] = dtw_cost(window, centroids[p])
    return out


@_jit
def min_sliding_dtw(seq, shp):
    """Minimum DTW between ``shp`` and every stride-1 window of ``seq`` of equal length."""
    lc = shp.shape[0]
    best = np.inf
    for t in range(seq.shape[0] - lc + 1):
        c = dtw_cost(seq[t : t + lc], shp)
        if c < best:
            best = c
    return best


@dataclass(frozen=True)
class Alignment:
    path: np.ndarray  # (k, 2) int index pairs into (a, b)
    cost: float


def _as2d(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _check_pair(a, b):
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise DomainError("DTW needs sequences of length >= 1")
    if a.shape[1] != b.shape[1]:
        raise DomainError(f"channel mismatch: {a.shape[1]} vs {b.shape[1]}")


def dtw_distance(a, b, normalize: bool = False) -> Alignment:
    """Optimal dependent-DTW alignment of ``a`` (l1 x D) and ``b`` (l2 x D).

    With ``normalize`` the cost is divided by ``l1 + l2``; the path is unchanged.
    """
    a, b = _as2d(a), _as2d(b)
    _check_pair(a, b)
    acc = _accumulate(a, b)
    cost = float(acc[-1, -1])
    if normalize:
        cost /= a.shape[0] + b.shape[0]
    return Alignment(_backtrack(acc), cost)


def dtw(a, b, normalize: bool = False) -> float:
    """Scalar DTW distance; cheaper than ``dtw_distance`` when no path is needed."""
    a, b = _as2d(a), _as2d(b)
    _check_pair(a, b)
    cost = float(dtw_cost(a, b))
    return cost / (a.shape[0] + b.shape[0]) if normalize else cost


def pairwise_dtw(seqs: Sequence[np.ndarray]) -> np.ndarray:
    seqs = [_as2d(s) for s in seqs]
    n = len(seqs)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = dtw_cost(seqs[i], seqs[j])
    return out


def medoid_index(seqs: Sequence[np.ndarray]) -> int:
    """Index minimising the summed DTW to all others (lowest index on ties)."""
    return int(np.argmin(pairwise_dtw(seqs).sum(axis=1)))


@dataclass
class Barycenter:
    values: np.ndarray
    objective: float
    iterations_used: int
    trace: list[float] = field(default_factory=list)


@_jit
def _dist_sum(points, y):
    total = 0.0
    for k in range(points.shape[0]):
        s = 0.0
        for d in range(points.shape[1]):
            diff = points[k, d] - y[d]
            s += diff * diff
        total += np.sqrt(s)
    return total


@_jit
def _geometric_median(points, start, n_iter=50):
    """Weiszfeld iterations from ``start``; never returns a worse point than ``start``."""
    y = start.copy()
    best = _dist_sum(points, y)
    D = points.shape[1]
    for _ in range(n_iter):
        num = np.zeros(D)
        wsum = 0.0
        for k in range(points.shape[0]):
            s = 0.0
            for d in range(D):
                diff = points[k, d] - y[d]
                s += diff * diff
            dk = np.sqrt(s)
            if dk > 1e-12:
                w = 1.0 / dk
                wsum += w
                for d in range(D):
                    num[d] += points[k, d] * w
        if wsum == 0.0:
            break
        y_new = num / wsum
        f = _dist_sum(points, y_new)
        if f >= best:
            break
        step = np.abs(y_new - y).max()
        y = y_new
        best = f
        if step < 1e-10:
            break
    return y


def _fit_length(x: np.ndarray, ref_len: int) -> np.ndarray:
    if x.shape[0] == 1:
        return np.repeat(x, ref_len, axis=0)
    return resample_columns(x, ref_len)


def dba_barycenter(
    members: Sequence,
    ref_len: int,
    max_iter: int = 10,
    tol: float = 1e-4,
    update: str = "median",
) -> Barycenter:
    """DTW barycenter of ``members`` at length ``ref_len``.

    Starts from the medoid resampled to ``ref_len``. Each iteration aligns every
    member to the current barycenter and re-estimates each barycenter frame from
    the member frames aligned to it. ``update="median"`` uses the per-frame
    geometric median, which is the exact minimiser of the summed Euclidean
    local costs for a fixed alignment, so the objective cannot increase.
    ``update="mean"`` is classic DBA averaging. Either way an update that would
    raise the objective is rejected and iteration stops. Iteration also stops
    once the relative improvement falls below ``tol``.
    """
    seqs = [_as2d(getattr(m, "values", m)) for m in members]
    if not seqs:
        raise DomainError("DBA needs at least one member")
    if len({s.shape[1] for s in seqs}) != 1:
        raise DomainError("DBA members must share the channel count")
    if update not in ("median", "mean"):
        raise DomainError(f"unknown frame update {update!r}")

    bary = _fit_length(seqs[medoid_index(seqs)], ref_len)
    obj = sum(float(dtw_cost(s, bary)) for s in seqs)
    trace = [obj]
    used = 0
    for _ in range(max_iter):
        if obj <= 0.0:
            break
        buckets: list[list[np.ndarray]] = [[] for _ in range(ref_len)]
        for s in seqs:
            path = _backtrack(_accumulate(s, bary))
            for i, j in path:
                buckets[j].append(s[i])
        new = np.empty_like(bary)
        for j, frames in enumerate(buckets):
            pts = np.ascontiguousarray(frames)
            mean = pts.mean(axis=0)
            if update == "mean":
                new[j] = mean
            else:
                start = mean if _dist_sum(pts, mean) < _dist_sum(pts, bary[j]) else bary[j].copy()
                new[j] = _geometric_median(pts, start)
        new_obj = sum(float(dtw_cost(s, new)) for s in seqs)
        if new_obj > obj:
            log.debug("DBA update rejected: %.6g -> %.6g", obj, new_obj)
            break
        improvement = obj - new_obj
        bary, obj = new, new_obj
        trace.append(obj)
        used += 1
        if improvement <= tol * trace[-2]:
            break
    return Barycenter(bary, obj, used, trace)


def warp_align_companions(
    price_alignment: Alignment, companions: np.ndarray, ref_len: int
) -> np.ndarray:
    """Warp companion channels onto a reference timeline.

    ``price_alignment`` pairs rows of the member (first index) with frames of
    the reference (second index). Each reference frame receives the mean of the
    companion rows aligned to it, i.e. a row-normalised warping-matrix product.
    """
    comp = _as2d(companions)
    sums = np.zeros((ref_len, comp.shape[1]))
    counts = np.zeros(ref_len)
    for i, j in price_alignment.path:
        sums[j] += comp[i]
        counts[j] += 1
    if (counts == 0).any():
        raise RuntimeError("alignment path leaves a reference frame unmatched")
    return sums / counts[:, None]
