"""Rule-based chart-pattern detection and multivariate prototype construction.

Six classic price formations seed SIMPC. Each is defined on five consecutive
alternating extrema E1..E5 of the smoothed close:

    HS    E1 peak;   E3 > E1, E3 > E5; shoulders E1, E5 within ``tol`` of their
          mean; troughs E2, E4 within ``tol`` * mean(E1, E5) of each other
    IHS   mirror of HS (E1 trough, E3 lowest)
    BTOP  E1 peak;   E1 < E3 < E5 and E2 > E4   (broadening)
    BBOT  E1 trough; E1 > E3 > E5 and E2 < E4
    TTOP  E1 peak;   E1 > E3 > E5 and E2 < E4   (narrowing)
    TBOT  E1 trough; E1 < E3 < E5 and E2 > E4

The broadening/triangle rules are strict orderings; they follow the usual
textbook formalisation and are approximations of the original definitions.
"""
from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dtw import dba_barycenter, dtw_distance, warp_align_companions
from .errors import DomainError
from .series import minmax_columns, resample_columns, smooth_array

log = logging.getLogger(__name__)

PATTERNS = ("HS", "IHS", "BTOP", "BBOT", "TTOP", "TBOT")


@dataclass(frozen=True)
class Extremum:
    index: int
    kind: str  # "peak" | "trough"
    value: float


@dataclass(frozen=True)
class Detection:
    pattern: str
    start: int
    length: int


@dataclass
class PatternPrototype:
    pattern_name: str
    values: np.ndarray
    instance_count: int

    def to_json(self) -> dict:
        return {
            "pattern_name": self.pattern_name,
            "instance_count": self.instance_count,
            "values": self.values.tolist(),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "PatternPrototype":
        return cls(doc["pattern_name"], np.asarray(doc["values"], dtype=float), int(doc["instance_count"]))


def _local_extrema(x: np.ndarray) -> list[tuple[int, str]]:
    out = []
    for i in range(1, len(x) - 1):
        if x[i - 1] < x[i] >= x[i + 1]:
            out.append((i, "peak"))
        elif x[i - 1] > x[i] <= x[i + 1]:
            out.append((i, "trough"))
    return out


def detect_extrema(
    close: np.ndarray,
    smooth_bandwidth: float = 0.3,
    coarse_bandwidth: float = 0.8,
    refine: int = 2,
) -> list[Extremum]:
    """Alternating peaks/troughs of a (raw) close series.

    Candidates come from the broadly smoothed series; each is moved to the
    max/min of the lightly smoothed series within +-``refine`` steps. When two
    neighbours end up of the same kind the weaker one is dropped.
    """
    close = np.asarray(close, dtype=float).ravel()
    if len(close) < 5:
        return []
    fine = smooth_array(close, smooth_bandwidth)
    coarse = smooth_array(close, coarse_bandwidth)
    refined: list[Extremum] = []
    for i, kind in _local_extrema(coarse):
        lo, hi = max(0, i - refine), min(len(close), i + refine + 1)
        window = fine[lo:hi]
        j = lo + int(np.argmax(window) if kind == "peak" else np.argmin(window))
        refined.append(Extremum(j, kind, float(fine[j])))

    out: list[Extremum] = []
    for e in refined:
        if out and out[-1].kind == e.kind:
            prev = out[-1]
            stronger = e.value > prev.value if e.kind == "peak" else e.value < prev.value
            if stronger:
                out[-1] = e
            continue
        if out and out[-1].index >= e.index:
            # refinement moved two opposite extrema onto each other; keep the first
            continue
        out.append(e)
    return out


def match_pattern(extrema: Sequence[Extremum], rule: str, tolerance: float = 0.03) -> bool:
    if len(extrema) != 5:
        raise DomainError(f"pattern rules need 5 extrema, got {len(extrema)}")
    if rule not in PATTERNS:
        raise DomainError(f"unknown pattern {rule!r}")
    e1, e2, e3, e4, e5 = (e.value for e in extrema)
    first = extrema[0].kind
    if any(extrema[k].kind == extrema[k + 1].kind for k in range(4)):
        return False

    if rule in ("HS", "IHS"):
        if first != ("peak" if rule == "HS" else "trough"):
            return False
        head = e3 > e1 and e3 > e5 if rule == "HS" else e3 < e1 and e3 < e5
        ref = abs(e1 + e5) / 2
        return bool(head and abs(e1 - e5) <= tolerance * ref and abs(e2 - e4) <= tolerance * ref)
    if rule == "BTOP":
        return first == "peak" and e1 < e3 < e5 and e2 > e4
    if rule == "BBOT":
        return first == "trough" and e1 > e3 > e5 and e2 < e4
    if rule == "TTOP":
        return first == "peak" and e1 > e3 > e5 and e2 < e4
    return first == "trough" and e1 < e3 < e5 and e2 > e4  # TBOT


def _overlap(a: Detection, b: Detection) -> float:
    inter = min(a.start + a.length, b.start + b.length) - max(a.start, b.start)
    return max(inter, 0) / min(a.length, b.length)


def resolve_overlaps(detections: Iterable[Detection], max_overlap: float = 0.5) -> list[Detection]:
    """Per pattern, keep the earliest of any detections overlapping by more than ``max_overlap``."""
    kept: list[Detection] = []
    for d in sorted(set(detections), key=lambda d: (d.start, d.length, d.pattern)):
        if all(k.pattern != d.pattern or _overlap(k, d) <= max_overlap for k in kept):
            kept.append(d)
    return kept


def scan_windows(
    extrema: Sequence[Extremum],
    n_steps: int,
    min_window: int = 15,
    max_window: int = 35,
    tolerance: float = 0.03,
) -> list[Detection]:
    """Slide every window size in [min_window, max_window] over ``n_steps`` steps.

    A window qualifies when the last five extrema inside it satisfy a rule; the
    instance emitted spans those five extrema. Results are ordered by start.
    """
    idx = [e.index for e in extrema]
    found = set()
    for w in range(min_window, max_window + 1):
        for s in range(0, n_steps - w + 1):
            lo = bisect.bisect_left(idx, s)
            hi = bisect.bisect_left(idx, s + w)
            if hi - lo < 5:
                continue
            five = extrema[hi - 5 : hi]
            for rule in PATTERNS:
                if match_pattern(five, rule, tolerance):
                    found.add(Detection(rule, five[0].index, five[-1].index - five[0].index + 1))
    return resolve_overlaps(found)


def build_prototypes(
    values: np.ndarray,
    detections: Sequence[Detection],
    ref_len: int,
    price_channel: int = 0,
    dba_kwargs: Mapping | None = None,
) -> list[PatternPrototype]:
    """Multivariate prototype per pattern from instances cut out of ``values`` (T x D).

    The price channel is averaged with DBA; companion channels are warped onto
    the barycenter's timeline through each instance's price alignment and then
    averaged element-wise. The result is Min-Max renormalised per channel.
    """
    values = np.asarray(values, dtype=float)
    groups: dict[str, list[np.ndarray]] = {p: [] for p in PATTERNS}
    for d in detections:
        seg = values[d.start : d.start + d.length]
        if len(seg) < 2:
            continue
        groups[d.pattern].append(resample_columns(minmax_columns(seg), ref_len))
    return build_prototypes_from_segments(groups, ref_len, price_channel, dba_kwargs)


def build_prototypes_from_segments(
    groups: Mapping[str, Sequence[np.ndarray]],
    ref_len: int,
    price_channel: int = 0,
    dba_kwargs: Mapping | None = None,
) -> list[PatternPrototype]:
    out = []
    for name, segs in groups.items():
        if not segs:
            log.warning("no instances of %s; prototype skipped", name)
            continue
        segs = [np.asarray(s, dtype=float) for s in segs]
        comp_cols = [c for c in range(segs[0].shape[1]) if c != price_channel]
        prices = [s[:, [price_channel]] for s in segs]
        bary = dba_barycenter(prices, ref_len, **(dba_kwargs or {})).values
        proto = np.empty((ref_len, segs[0].shape[1]))
        proto[:, price_channel] = bary[:, 0]
        if comp_cols:
            warped = [
                warp_align_companions(dtw_distance(p, bary), s[:, comp_cols], ref_len)
                for p, s in zip(prices, segs)
            ]
            proto[:, comp_cols] = np.mean(warped, axis=0)
        out.append(PatternPrototype(name, minmax_columns(proto), len(segs)))
    return out
