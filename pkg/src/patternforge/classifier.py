"""Shapelet-distance features, a probabilistic linear SVM and the two confidence filters.

Features are minimum sliding-window DTW distances from a normalised prefix to
each shapelet. Classification is one-vs-rest linear SVM (subgradient descent
on the L2-regularised mean hinge loss) with per-label Platt calibration.
Training-side filtering drops labels whose correct and incorrect predictions
cannot be told apart by confidence (two-sample K-S); inference-side filtering
keeps only the most confident predictions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import kolmogorov

from .dtw import min_sliding_dtw
from .errors import ConfigError, DomainError
from .shapelets import Shapelet

log = logging.getLogger(__name__)

NON_PATTERN = -1
TIE_TOL = 1e-12


# --- features ------------------------------------------------------------------


def featurize(prefix: np.ndarray, shapelets: Sequence[Shapelet]) -> np.ndarray:
    """Min DTW between each shapelet and every equal-length window of an L x D prefix."""
    seq = np.ascontiguousarray(prefix, dtype=float)
    out = np.empty(len(shapelets))
    for k, s in enumerate(shapelets):
        shp = np.ascontiguousarray(s.values.T)
        if shp.shape[0] > seq.shape[0]:
            raise DomainError(f"shapelet length {shp.shape[0]} exceeds input length {seq.shape[0]}")
        if shp.shape[1] != seq.shape[1]:
            raise DomainError(f"shapelet has {shp.shape[1]} channels, input {seq.shape[1]}")
        out[k] = min_sliding_dtw(seq, shp)
    return out


def featurize_many(prefixes: Sequence[np.ndarray], shapelets: Sequence[Shapelet]) -> np.ndarray:
    return np.stack([featurize(p, shapelets) for p in prefixes]) if len(prefixes) else np.zeros((0, len(shapelets)))


# --- SVM -----------------------------------------------------------------------


@dataclass(frozen=True)
class ClassifierConfig:
    C: float = 1.0
    max_iter: int = 2000
    step0: float = 1.0
    probability: str = "platt"  # or "softmax"
    ks_alpha: float = 0.05
    ks_binned: bool = True
    ks_bins: int = 100
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.C <= 0 or self.max_iter < 1 or self.step0 <= 0:
            raise ConfigError("C, max_iter and step0 must be positive")
        if self.probability not in ("platt", "softmax"):
            raise ConfigError(f"unknown probability mode {self.probability!r}")
        if not 0 < self.ks_alpha < 1 or not 0 <= self.eval_fraction < 1 or self.ks_bins < 1:
            raise ConfigError("ks_alpha in (0,1), eval_fraction in [0,1), ks_bins >= 1 required")


def _ovr_objective(W, b, X, Y, C):
    margins = Y * (X @ W.T + b)
    return 0.5 * (W**2).sum(axis=1) + C * np.maximum(0.0, 1.0 - margins).mean(axis=0)


def fit_ovr_svm(X: np.ndarray, y_idx: np.ndarray, n_labels: int, cfg: ClassifierConfig):
    """Full-batch subgradient descent on 0.5 ||w_k||^2 + C * mean hinge, all labels at once.

    Step size step0 / sqrt(t); the best iterate per label is returned. The mean
    (not the sum) makes the solution independent of dataset duplication.
    """
    n, d = X.shape
    Y = np.where(y_idx[:, None] == np.arange(n_labels)[None, :], 1.0, -1.0)
    W = np.zeros((n_labels, d))
    b = np.zeros(n_labels)
    best_W, best_b = W.copy(), b.copy()
    best_obj = _ovr_objective(W, b, X, Y, cfg.C)
    for t in range(1, cfg.max_iter + 1):
        active = (Y * (X @ W.T + b) < 1.0).astype(float) * Y  # (n, K)
        gW = W - cfg.C * (active.T @ X) / n
        gb = -cfg.C * active.sum(axis=0) / n
        eta = cfg.step0 / math.sqrt(t)
        W = W - eta * gW
        b = b - eta * gb
        obj = _ovr_objective(W, b, X, Y, cfg.C)
        better = obj < best_obj
        best_W[better], best_b[better], best_obj[better] = W[better], b[better], obj[better]
    return best_W, best_b


def fit_platt(f: np.ndarray, positive: np.ndarray, max_iter: int = 100) -> tuple[float, float]:
    """Sigmoid 1 / (1 + exp(A f + B)) fitted by Newton's method with backtracking.

    Targets are Platt's smoothed labels; the iteration follows the numerically
    stable variant of Lin, Lin and Weng.
    """
    n_pos = float(positive.sum())
    n_neg = float(len(positive) - n_pos)
    t = np.where(positive, (n_pos + 1) / (n_pos + 2), 1 / (n_neg + 2))
    A, B = 0.0, math.log((n_neg + 1) / (n_pos + 1))

    def nll(A, B):
        z = f * A + B
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)), (t - 1) * z + np.log1p(np.exp(z)))))

    fval = nll(A, B)
    sigma = 1e-12
    for _ in range(max_iter):
        z = f * A + B
        p = np.where(z >= 0, np.exp(-z) / (1 + np.exp(-z)), 1 / (1 + np.exp(z)))
        q = 1 - p
        d2 = p * q
        h11 = sigma + float((f * f * d2).sum())
        h22 = sigma + float(d2.sum())
        h21 = float((f * d2).sum())
        d1 = t - p
        g1, g2 = float((f * d1).sum()), float(d1.sum())
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = nll(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2
        else:
            break
    return A, B


@dataclass
class KsReport:
    statistic: dict[int, float] = field(default_factory=dict)
    p_value: dict[int, float] = field(default_factory=dict)
    dropped: list[int] = field(default_factory=list)
    reasons: dict[int, str] = field(default_factory=dict)
    removed_fraction: float = 0.0


@dataclass
class PatternClassifier:
    labels: list[int]
    W: np.ndarray
    b: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    platt: np.ndarray  # (K, 2) A, B
    config: ClassifierConfig
    discarded: list[int] = field(default_factory=list)
    ks_report: KsReport | None = None

    @property
    def active(self) -> list[int]:
        return [l for l in self.labels if l not in self.discarded]

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.W.shape[1]:
            raise DomainError(f"expected {self.W.shape[1]} features, got {X.shape[1]}")
        return ((X - self.mean) / self.scale) @ self.W.T + self.b

    def to_json(self) -> dict:
        ks = None
        if self.ks_report is not None:
            ks = {
                "statistic": {str(k): v for k, v in self.ks_report.statistic.items()},
                "p_value": {str(k): v for k, v in self.ks_report.p_value.items()},
                "dropped": self.ks_report.dropped,
                "reasons": {str(k): v for k, v in self.ks_report.reasons.items()},
                "removed_fraction": self.ks_report.removed_fraction,
            }
        return {
            "labels": self.labels,
            "weights": self.W.tolist(),
            "bias": self.b.tolist(),
            "feature_mean": self.mean.tolist(),
            "feature_scale": self.scale.tolist(),
            "platt": self.platt.tolist(),
            "config": asdict(self.config),
            "discarded": self.discarded,
            "ks_report": ks,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PatternClassifier":
        ks = doc.get("ks_report")
        report = None
        if ks is not None:
            report = KsReport(
                {int(k): v for k, v in ks["statistic"].items()},
                {int(k): v for k, v in ks["p_value"].items()},
                [int(x) for x in ks["dropped"]],
                {int(k): v for k, v in ks["reasons"].items()},
                ks["removed_fraction"],
            )
        return cls(
            [int(x) for x in doc["labels"]],
            np.asarray(doc["weights"], dtype=float).reshape(len(doc["labels"]), -1),
            np.asarray(doc["bias"], dtype=float),
            np.asarray(doc["feature_mean"], dtype=float),
            np.asarray(doc["feature_scale"], dtype=float),
            np.asarray(doc["platt"], dtype=float).reshape(-1, 2),
            ClassifierConfig(**doc["config"]),
            [int(x) for x in doc["discarded"]],
            report,
        )


def train_classifier(X: np.ndarray, labels: Sequence[int], cfg: ClassifierConfig = ClassifierConfig()) -> PatternClassifier:
    """One-vs-rest linear SVM on standardised features plus Platt calibration."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise DomainError(f"need at least 2 labels, got {classes}")
    counts = {c: int((labels == c).sum()) for c in classes}
    if min(counts.values()) < 2:
        raise DomainError(f"every label needs at least 2 samples, got {counts}")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    y_idx = np.searchsorted(classes, labels)
    W, b = fit_ovr_svm(Z, y_idx, len(classes), cfg)
    F = Z @ W.T + b
    platt = np.array([fit_platt(F[:, k], y_idx == k) for k in range(len(classes))])
    return PatternClassifier(classes, W, b, mean, scale, platt, cfg)


def predict_proba(clf: PatternClassifier, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(probabilities over trained labels, p_max, predicted label).

    Probabilities are renormalised per-label Platt sigmoids (or a softmax over
    decision values). A prediction whose argmax label was discarded by the K-S
    filter is reported as -1. Argmax ties (within ``TIE_TOL``) go to the lowest label.
    """
    F = clf.decision(X)
    if clf.config.probability == "softmax":
        e = np.exp(F - F.max(axis=1, keepdims=True))
        P = e / e.sum(axis=1, keepdims=True)
    else:
        z = F * clf.platt[:, 0] + clf.platt[:, 1]
        s = np.where(z >= 0, np.exp(-z) / (1 + np.exp(-z)), 1 / (1 + np.exp(z)))
        P = s / s.sum(axis=1, keepdims=True)
    p_max = P.max(axis=1)
    # probabilities within TIE_TOL of the maximum count as tied; first (lowest) label wins
    k = np.argmax(P >= (p_max - TIE_TOL)[:, None], axis=1)
    lab = np.asarray(clf.labels)[k]
    lab = np.where(np.isin(lab, clf.discarded), NON_PATTERN, lab)
    return P, p_max, lab


# --- filters -------------------------------------------------------------------


def _binned_cdf(x: np.ndarray, bins: int) -> np.ndarray:
    counts, _ = np.histogram(np.clip(x, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return np.cumsum(counts) / len(x)


def ks_two_sample(a, b, binned: bool = True, bins: int = 100) -> tuple[float, float]:
    """Two-sample K-S statistic and asymptotic p-value.

    Binned mode compares the empirical CDFs at the edges of ``bins`` equal bins
    on [0, 1]; raw mode takes the supremum over the pooled sample. The p-value
    is the Kolmogorov survival function at sqrt(n_eff) * D.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) == 0 or len(b) == 0:
        raise DomainError("K-S test needs two non-empty samples")
    if binned:
        D = float(np.abs(_binned_cdf(a, bins) - _binned_cdf(b, bins)).max())
    else:
        grid = np.concatenate([a, b])
        fa = np.searchsorted(np.sort(a), grid, side="right") / len(a)
        fb = np.searchsorted(np.sort(b), grid, side="right") / len(b)
        D = float(np.abs(fa - fb).max())
    n_eff = len(a) * len(b) / (len(a) + len(b))
    p = 1.0 if D == 0 else float(kolmogorov(math.sqrt(n_eff) * D))
    return D, min(max(p, 0.0), 1.0)


def ks_label_filter(
    clf: PatternClassifier,
    p_max: np.ndarray,
    predicted: np.ndarray,
    truth: np.ndarray,
) -> PatternClassifier:
    """Drop labels whose correct and incorrect predictions share a p_max distribution.

    Evidence for a label is the set of evaluation samples predicted as that
    label. Labels lacking either correct or incorrect samples are dropped too.
    Returns the classifier with ``discarded`` and ``ks_report`` filled in.
    """
    p_max, predicted, truth = (np.asarray(v) for v in (p_max, predicted, truth))
    cfg = clf.config
    report = KsReport()
    for lab in clf.labels:
        sel = predicted == lab
        right = p_max[sel & (truth == lab)]
        wrong = p_max[sel & (truth != lab)]
        if len(right) == 0 or len(wrong) == 0:
            log.warning("label %d has %d correct and %d incorrect samples; dropped", lab, len(right), len(wrong))
            report.dropped.append(lab)
            report.reasons[lab] = "one-sided"
            continue
        D, p = ks_two_sample(right, wrong, cfg.ks_binned, cfg.ks_bins)
        report.statistic[lab], report.p_value[lab] = D, p
        if p > cfg.ks_alpha:
            report.dropped.append(lab)
            report.reasons[lab] = "not separable"
    if len(predicted):
        report.removed_fraction = float(np.isin(predicted, report.dropped).mean())
    clf.discarded = sorted(report.dropped)
    clf.ks_report = report
    return clf


def apply_confidence_threshold(labels: Sequence[int], p_max: Sequence[float], x_percent: float) -> np.ndarray:
    """Keep the ceil(x% of N) most confident non-(-1) predictions; the rest become -1.

    Inputs are in date order; equal confidences favour the earlier item.
    """
    if not 0 < x_percent <= 100:
        raise ConfigError(f"x must lie in (0, 100], got {x_percent}")
    labels = np.asarray(labels, dtype=int)
    p_max = np.asarray(p_max, dtype=float)
    cand = np.flatnonzero(labels != NON_PATTERN)
    keep_n = math.ceil(x_percent / 100 * len(cand) - 1e-9)
    order = cand[np.lexsort((cand, -p_max[cand]))]
    out = np.full(len(labels), NON_PATTERN)
    kept = order[:keep_n]
    out[kept] = labels[kept]
    return out
