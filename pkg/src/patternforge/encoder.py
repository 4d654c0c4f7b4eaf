"""Shapelet encoder: multiscale slicing, DTW triplet mining and a dilated causal CNN.

Training data are the SIMPC subsequences. Each one is cut to its gamma-prefix,
interpolated to ``L`` steps and normalised, then sliced at several window
ratios. For every (subsequence, ratio) unit the slices are split into two
groups with DTW k-means; each group contributes one anchor/positive/negative
triplet. The network is trained on a log-ratio triplet loss over Euclidean
embedding distances.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dtw import dba_barycenter, dtw_cost, pairwise_dtw
from .errors import ConfigError, DomainError, TrainingError
from .series import minmax_columns, resample_columns
from .simpc import weighted_draw

log = logging.getLogger(__name__)

PARAMS_FORMAT = "patternforge.encoder"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    gamma: float = 0.8
    L: int = 100
    alphas: tuple[float, ...] = (0.2, 0.4, 0.6)
    slice_stride: int = 5
    emb_dim: int = 64
    conv_channels: int = 32
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)
    leaky_slope: float = 0.01
    epsilon: float = 1e-6
    soft_margin: float = 0.2
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 16  # (subsequence, alpha) units per optimiser step
    kmeans_max_iter: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if not 0 < self.gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.alphas or not all(0 < a < 1 for a in self.alphas):
            raise ConfigError(f"every alpha must lie in (0, 1), got {self.alphas}")
        if self.epsilon <= 0 or self.soft_margin <= 0:
            raise ConfigError("epsilon and soft_margin must be > 0")
        if self.L < 2 or self.slice_stride < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("L >= 2, slice_stride >= 1, batch_size >= 1 and epochs >= 0 required")
        for a in self.alphas:
            if window_length(a, self.L) < self.kernel_size:
                raise ConfigError(f"alpha={a} gives windows shorter than the kernel")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        d["dilations"] = list(self.dilations)
        return d


def window_length(alpha: float, L: int) -> int:
    return int(round(alpha * L))


def prefix_length(length: int, gamma: float) -> int:
    return min(length, math.ceil(gamma * length - 1e-9))


def prefix_and_interpolate(values: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """First ceil(gamma * l) steps of a raw l x D subsequence, resampled to L and normalised."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] < 2:
        raise DomainError(f"subsequence needs at least 2 steps, got {values.shape[0]}")
    head = values[: max(2, prefix_length(values.shape[0], cfg.gamma))]
    return minmax_columns(resample_columns(head, cfg.L))


def slice_multiscale(matrix: np.ndarray, alpha: float, stride: int) -> np.ndarray:
    """Windows of length alpha * L every ``stride`` steps, as an (n, D, alpha * L) array."""
    matrix = np.asarray(matrix, dtype=float)
    L = matrix.shape[0]
    w = window_length(alpha, L)
    if w < 2:
        raise DomainError(f"alpha * L = {alpha * L} is shorter than 2 steps")
    if w > L:
        raise DomainError(f"window {w} exceeds series length {L}")
    starts = range(0, L - w + 1, stride)
    return np.stack([matrix[s : s + w].T for s in starts])


# --- triplet mining -------------------------------------------------------------


def _time_major(segments: np.ndarray) -> list[np.ndarray]:
    return [np.ascontiguousarray(s.T) for s in segments]


def dtw_kmeans2(
    segments: np.ndarray,
    rng: np.random.Generator,
    max_iter: int = 10,
    dba_max_iter: int = 5,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Two-way DTW k-means over channel-major segments of a common length.

    Seeding is k-means++ on squared DTW; centroids are DBA barycenters. An
    empty cluster receives the segment farthest from the other centroid.
    Returns (labels, time-major centroids).
    """
    seqs = _time_major(np.asarray(segments, dtype=float))
    n = len(seqs)
    if n < 2:
        raise DomainError(f"DTW k-means needs at least 2 segments, got {n}")
    length = seqs[0].shape[0]

    first = int(rng.integers(n))
    d0 = np.array([dtw_cost(s, seqs[first]) for s in seqs])
    second = weighted_draw(rng, d0**2)
    centroids = [seqs[first], seqs[second]]

    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = np.array([[dtw_cost(s, c) for c in centroids] for s in seqs])
        new = np.argmin(dist, axis=1)  # ties go to cluster 0
        for k in (0, 1):
            if not (new == k).any():
                far = int(np.argmax(dist[:, 1 - k]))
                new[far] = k
        if np.array_equal(new, labels):
            break
        labels = new
        centroids = [
            dba_barycenter([seqs[i] for i in np.flatnonzero(labels == k)], length, dba_max_iter).values
            for k in (0, 1)
        ]
    return labels, centroids


@dataclass
class TripletBatch:
    """Indices into the segment array of one (subsequence, alpha) unit."""

    anchor: int
    positives: list[int]
    negatives: list[int]


def select_triplets(labels: np.ndarray, dist: np.ndarray) -> list[TripletBatch]:
    """One triplet per cluster from a 2-way labelling and the pairwise DTW matrix.

    Anchor is the cluster medoid; positives are the ceil(|c|/5) members nearest
    to it and negatives the ceil(|c'|/5) members of the other cluster farthest
    from it. Ties resolve to the lower index.
    """
    labels = np.asarray(labels)
    out = []
    for k in (0, 1):
        own = np.flatnonzero(labels == k)
        other = np.flatnonzero(labels != k)
        if len(own) < 2 or len(other) == 0:
            log.warning("cluster %d has %d members and its complement %d; triplet skipped", k, len(own), len(other))
            continue
        anchor = int(own[np.argmin(dist[np.ix_(own, own)].sum(axis=1))])
        rest = own[own != anchor]
        n_pos = math.ceil(len(own) / 5)
        positives = rest[np.argsort(dist[anchor, rest], kind="stable")[:n_pos]]
        n_neg = math.ceil(len(other) / 5)
        negatives = other[np.argsort(-dist[anchor, other], kind="stable")[:n_neg]]
        out.append(TripletBatch(anchor, positives.tolist(), negatives.tolist()))
    return out


@dataclass
class TrainingUnit:
    subsequence: int
    alpha: float
    segments: np.ndarray  # (n, D, alpha * L)
    triplets: list[TripletBatch]


def mine_units(matrices: Sequence[np.ndarray], cfg: EncoderConfig, rng: np.random.Generator) -> list[TrainingUnit]:
    units = []
    for i, m in enumerate(matrices):
        for alpha in cfg.alphas:
            segs = slice_multiscale(m, alpha, cfg.slice_stride)
            if len(segs) < 2:
                continue
            labels, _ = dtw_kmeans2(segs, rng, cfg.kmeans_max_iter)
            trips = select_triplets(labels, pairwise_dtw(_time_major(segs)))
            if trips:
                units.append(TrainingUnit(i, alpha, segs, trips))
    return units


# --- network -------------------------------------------------------------------


class CausalBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, dilation: int, slope: float):
        super().__init__()
        self.left_pad = (kernel_size - 1) * dilation
        self.slope = slope
        self.conv = nn.Conv1d(c_in, c_out, kernel_size, dilation=dilation)
        self.proj = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.leaky_relu(self.conv(F.pad(x, (self.left_pad, 0))), self.slope)
        return y + (x if self.proj is None else self.proj(x))


class Encoder(nn.Module):
    """Dilated causal conv stack, max-pool over time, linear projection."""

    def __init__(self, in_channels: int, cfg: EncoderConfig):
        super().__init__()
        self.in_channels = in_channels
        self.kernel_size = cfg.kernel_size
        blocks = []
        c = in_channels
        for d in cfg.dilations:
            blocks.append(CausalBlock(c, cfg.conv_channels, cfg.kernel_size, d, cfg.leaky_slope))
            c = cfg.conv_channels
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(c, cfg.emb_dim)
        self.double()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            return self.forward(x[None])[0]
        if x.shape[-1] < self.kernel_size:
            raise DomainError(f"segment length {x.shape[-1]} is shorter than the kernel")
        if x.shape[1] != self.in_channels:
            raise DomainError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        h = self.blocks(x)
        return self.head(h.max(dim=-1).values)


def init_params(model: nn.Module, seed: int) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, (nn.Conv1d, nn.Linear)):
                fan_in = mod.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                for p in (mod.weight, mod.bias):
                    p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 * bound - bound)


def build_encoder(in_channels: int, cfg: EncoderConfig) -> Encoder:
    model = Encoder(in_channels, cfg)
    init_params(model, cfg.rng_seed)
    return model


def embed(model: Encoder, segments: np.ndarray) -> np.ndarray:
    """Embeddings of an (n, D, len) array (or one (D, len) segment)."""
    with torch.no_grad():
        return model(torch.as_tensor(np.asarray(segments, dtype=float))).numpy()


# --- loss and training ---------------------------------------------------------


def _mean_pairwise(z: torch.Tensor) -> torch.Tensor:
    """(1/n^2) sum over all ordered pairs of Euclidean distances; diagonal terms are 0."""
    n = z.shape[0]
    if n < 2:
        return z.new_zeros(())
    i, j = torch.triu_indices(n, n, offset=1)
    return 2 * torch.linalg.vector_norm(z[i] - z[j], dim=1).sum() / n**2


def triplet_loss(z_a, z_pos, z_neg, epsilon: float = 1e-6, margin: float = 0.2) -> torch.Tensor:
    """log((d_ap + d_intra+ + d_intra-) / (d_an + epsilon) + margin)."""
    z_a, z_pos, z_neg = (torch.as_tensor(z, dtype=torch.float64) for z in (z_a, z_pos, z_neg))
    if len(z_pos) == 0 or len(z_neg) == 0:
        raise DomainError("triplet needs at least one positive and one negative")
    z_a = z_a.reshape(-1)
    z_pos, z_neg = z_pos.reshape(len(z_pos), -1), z_neg.reshape(len(z_neg), -1)
    d_ap = torch.linalg.vector_norm(z_pos - z_a, dim=1).mean()
    d_an = torch.linalg.vector_norm(z_neg - z_a, dim=1).mean()
    num = d_ap + _mean_pairwise(z_pos) + _mean_pairwise(z_neg)
    return torch.log(num / (d_an + epsilon) + margin)


def units_loss(model: Encoder, units: Sequence[TrainingUnit], cfg: EncoderConfig) -> torch.Tensor:
    """Mean over units of the mean triplet loss within each unit.

    Segments of equal length are embedded in one forward pass.
    """
    by_len: dict[int, list[int]] = {}
    for k, u in enumerate(units):
        by_len.setdefault(u.segments.shape[-1], []).append(k)
    z_of: dict[int, torch.Tensor] = {}
    for _, ks in sorted(by_len.items()):
        x = torch.as_tensor(np.concatenate([units[k].segments for k in ks]))
        z = model(x)
        offset = 0
        for k in ks:
            n = len(units[k].segments)
            z_of[k] = z[offset : offset + n]
            offset += n
    per_unit = []
    for k, u in enumerate(units):
        z = z_of[k]
        losses = [
            triplet_loss(z[t.anchor], z[t.positives], z[t.negatives], cfg.epsilon, cfg.soft_margin)
            for t in u.triplets
        ]
        per_unit.append(torch.stack(losses).mean())
    return torch.stack(per_unit).mean()


@dataclass
class TrainedEncoder:
    model: Encoder
    config: EncoderConfig
    loss_trace: list[float] = field(default_factory=list)
    n_units: int = 0


def train_encoder(subsequences: Sequence[np.ndarray], cfg: EncoderConfig) -> TrainedEncoder:
    """Mine triplets once, then run ``cfg.epochs`` epochs of Adam over shuffled unit batches.

    ``subsequences`` are raw l x D pattern instances. The loss trace holds the
    mean unit loss of each epoch, measured on the batches as they are visited.
    """
    if not len(subsequences):
        raise TrainingError("empty pattern set")
    rng = np.random.default_rng(cfg.rng_seed)
    mats = [prefix_and_interpolate(s, cfg) for s in subsequences]
    D = mats[0].shape[1]
    model = build_encoder(D, cfg)
    units = mine_units(mats, cfg, rng)
    if not units:
        raise TrainingError("no valid triplets could be mined from the pattern set")
    log.info("encoder: %d subsequences, %d training units", len(mats), len(units))

    trace: list[float] = []
    if cfg.epochs == 0:
        return TrainedEncoder(model, cfg, trace, len(units))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(units))
        total, count = 0.0, 0
        for b in range(0, len(order), cfg.batch_size):
            batch = [units[k] for k in order[b : b + cfg.batch_size]]
            loss = units_loss(model, batch, cfg)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        trace.append(total / count)
        log.debug("encoder epoch %d loss %.6f", epoch, trace[-1])
    return TrainedEncoder(model, cfg, trace, len(units))


# --- serialisation -------------------------------------------------------------


def params_to_doc(trained: TrainedEncoder) -> dict:
    m = trained.model
    return {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "in_channels": m.in_channels,
        "config": trained.config.to_dict(),
        "tensors": {
            name: {"shape": list(t.shape), "data": t.detach().reshape(-1).tolist()}
            for name, t in m.state_dict().items()
        },
        "loss_trace": list(trained.loss_trace),
    }


def params_from_doc(doc: dict) -> TrainedEncoder:
    if doc.get("format") != PARAMS_FORMAT or doc.get("version") != PARAMS_VERSION:
        raise ConfigError(f"unsupported encoder document {doc.get('format')!r} v{doc.get('version')}")
    cfg = EncoderConfig(**doc["config"])
    model = Encoder(int(doc["in_channels"]), cfg)
    state = {
        name: torch.tensor(t["data"], dtype=torch.float64).reshape(t["shape"])
        for name, t in doc["tensors"].items()
    }
    model.load_state_dict(state)
    return TrainedEncoder(model, cfg, list(doc.get("loss_trace", [])))


def write_loss_csv(path: str | Path, trace: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])
