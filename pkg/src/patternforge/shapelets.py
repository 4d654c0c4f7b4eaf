"""Shapelet discovery from the encoder's latent cloud.

Every slice of every pattern subsequence is embedded; Euclidean k-means over
the embeddings yields ``g`` clusters whose most central member becomes a
shapelet candidate. Candidates from clusters that are label-pure enough
survive and are ranked by a size-weighted separation score.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans

from .encoder import EncoderConfig, Encoder, embed, prefix_and_interpolate, slice_multiscale
from .errors import ConfigError, DomainError, PipelineError
from .series import resample_columns


@dataclass(frozen=True)
class ShapeletConfig:
    g: int = 10
    kmeans_max_iter: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        if self.g < 1 or self.kmeans_max_iter < 1:
            raise ConfigError("g and kmeans_max_iter must be >= 1")


@dataclass
class LatentCloud:
    embeddings: np.ndarray  # (N, h_emb)
    segments: list[np.ndarray]  # channel-major (D, alpha * L) slices
    sources: list[tuple[int, float, int]]  # (subsequence id, alpha, window start)
    labels: np.ndarray  # SIMPC label of the parent subsequence

    def __len__(self) -> int:
        return len(self.segments)


@dataclass
class Candidate:
    cluster: int
    members: np.ndarray  # cloud indices
    representative: int  # cloud index nearest to the cluster centre


@dataclass
class Shapelet:
    values: np.ndarray  # (D, L_c)
    source: tuple[int, float, int]
    cluster_size: int
    purity: float
    utility: float
    label: int  # majority SIMPC label of the cluster

    def to_json(self) -> dict:
        sub, alpha, start = self.source
        return {
            "values": self.values.tolist(),
            "source": {"subsequence": sub, "alpha": alpha, "start": start},
            "cluster_size": self.cluster_size,
            "purity": self.purity,
            "utility": self.utility,
            "label": self.label,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Shapelet":
        s = doc["source"]
        return cls(
            np.asarray(doc["values"], dtype=float),
            (int(s["subsequence"]), float(s["alpha"]), int(s["start"])),
            int(doc["cluster_size"]),
            float(doc["purity"]),
            float(doc["utility"]),
            int(doc["label"]),
        )


def build_latent_cloud(
    model: Encoder,
    subsequences: Sequence[np.ndarray],
    labels: Sequence[int],
    cfg: EncoderConfig,
) -> LatentCloud:
    """Embed every (subsequence, alpha, window) slice of the gamma-prefixed inputs."""
    if len(subsequences) != len(labels):
        raise DomainError("one label per subsequence required")
    segments, sources, tags, embs = [], [], [], []
    for i, (sub, lab) in enumerate(zip(subsequences, labels)):
        m = prefix_and_interpolate(sub, cfg)
        for alpha in cfg.alphas:
            segs = slice_multiscale(m, alpha, cfg.slice_stride)
            embs.append(embed(model, segs))
            for k, seg in enumerate(segs):
                segments.append(seg)
                sources.append((i, alpha, k * cfg.slice_stride))
                tags.append(int(lab))
    emb = np.concatenate(embs) if embs else np.zeros((0, model.head.out_features))
    return LatentCloud(emb, segments, sources, np.asarray(tags, dtype=int))


def cluster_candidates(cloud: LatentCloud, cfg: ShapeletConfig) -> list[Candidate]:
    """k-means++ seeded Euclidean k-means; one candidate per non-empty cluster."""
    if len(cloud) < cfg.g:
        raise DomainError(f"latent cloud of {len(cloud)} points cannot form {cfg.g} clusters")
    km = KMeans(n_clusters=cfg.g, init="k-means++", n_init=1, max_iter=cfg.kmeans_max_iter,
                random_state=cfg.rng_seed)
    assign = km.fit_predict(cloud.embeddings)
    out = []
    for c in range(cfg.g):
        members = np.flatnonzero(assign == c)
        if len(members) == 0:
            continue
        d = np.linalg.norm(cloud.embeddings[members] - km.cluster_centers_[c], axis=1)
        out.append(Candidate(c, members, int(members[np.argmin(d)])))
    return out


def purity(labels: np.ndarray) -> tuple[float, int]:
    """(share of the most frequent label, that label); ties go to the smaller label."""
    values, counts = np.unique(labels, return_counts=True)
    k = int(np.argmax(counts))
    return counts[k] / len(labels), int(values[k])


def utility_scores(curves: Sequence[np.ndarray], sizes: Sequence[int]) -> np.ndarray:
    """U_c = |C_c| * sum over other candidates of the squared distance between flattened curves.

    Curves of different length are first resampled to the longest one.
    """
    L = max(c.shape[1] for c in curves)
    flat = np.stack([resample_columns(c.T, L).T.ravel() for c in curves])
    sq = ((flat[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
    return np.asarray(sizes, dtype=float) * sq.sum(axis=1)


def score_and_filter(candidates: Sequence[Candidate], cloud: LatentCloud, P_prime: int) -> list[Shapelet]:
    """Keep candidates whose cluster purity exceeds 1/P', ranked by utility (descending)."""
    kept = []
    for cand in candidates:
        p, lab = purity(cloud.labels[cand.members])
        if p > 1.0 / P_prime:
            kept.append((cand, p, lab))
    if not kept:
        raise PipelineError("no shapelet cluster passed the purity filter")
    curves = [cloud.segments[c.representative] for c, _, _ in kept]
    sizes = [len(c.members) for c, _, _ in kept]
    util = utility_scores(curves, sizes)
    shapelets = [
        Shapelet(curve.copy(), cloud.sources[c.representative], size, float(p), float(u), lab)
        for (c, p, lab), curve, size, u in zip(kept, curves, sizes, util)
    ]
    order = sorted(range(len(shapelets)), key=lambda k: -shapelets[k].utility)
    return [shapelets[k] for k in order]


def discover_shapelets(
    model: Encoder,
    subsequences: Sequence[np.ndarray],
    labels: Sequence[int],
    P_prime: int,
    enc_cfg: EncoderConfig,
    cfg: ShapeletConfig,
) -> list[Shapelet]:
    cloud = build_latent_cloud(model, subsequences, labels, enc_cfg)
    return score_and_filter(cluster_candidates(cloud, cfg), cloud, P_prime)


def bank_to_json(shapelets: Sequence[Shapelet], cfg: ShapeletConfig, P_prime: int) -> dict:
    return {
        "config": asdict(cfg),
        "P_prime": P_prime,
        "shapelets": [s.to_json() for s in shapelets],
    }


def bank_from_json(doc: dict) -> list[Shapelet]:
    return [Shapelet.from_json(s) for s in doc["shapelets"]]
