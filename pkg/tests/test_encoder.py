import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_dtw
from patternforge.errors import ConfigError, DomainError, TrainingError
from patternforge.encoder import (
    EncoderConfig,
    build_encoder,
    dtw_kmeans2,
    embed,
    mine_units,
    params_from_doc,
    params_to_doc,
    prefix_and_interpolate,
    prefix_length,
    select_triplets,
    slice_multiscale,
    train_encoder,
    triplet_loss,
    units_loss,
    write_loss_csv,
)
from patternforge.dtw import dtw_cost
from patternforge.series import minmax_columns, resample_columns

SMALL = dict(conv_channels=4, emb_dim=8, L=40, alphas=(0.3, 0.5), epochs=0)


def loss_oracle(za, zp, zn, eps=1e-6, m=0.2):
    """Scalar re-evaluation with explicit loops."""
    def dist(u, v):
        return math.sqrt(sum((a - b) ** 2 for a, b in zip(u, v)))

    d_ap = sum(dist(za, p) for p in zp) / len(zp)
    d_an = sum(dist(za, n) for n in zn) / len(zn)
    ip = sum(dist(a, b) for a in zp for b in zp) / len(zp) ** 2
    in_ = sum(dist(a, b) for a in zn for b in zn) / len(zn) ** 2
    return math.log((d_ap + ip + in_) / (d_an + eps) + m)


def two_family_segments(rng, n_each=6, length=20):
    t = np.linspace(0, 1, length)
    a = [np.stack([np.sin(2 * np.pi * t) + rng.normal(0, 0.05, length), t]) for _ in range(n_each)]
    b = [np.stack([-np.sin(2 * np.pi * t) + rng.normal(0, 0.05, length), 1 - t]) for _ in range(n_each)]
    return np.stack(a + b)


class TestConfig:
    def test_defaults(self):
        c = EncoderConfig()
        assert (c.gamma, c.L, c.alphas, c.epsilon, c.soft_margin) == (0.8, 100, (0.2, 0.4, 0.6), 1e-6, 0.2)

    @pytest.mark.parametrize("kw", [{"gamma": 1.0}, {"gamma": 0.0}, {"alphas": (0.2, 1.0)}, {"epsilon": 0},
                                    {"soft_margin": -0.1}, {"alphas": (0.01,)}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            EncoderConfig(**kw)


class TestPrefix:
    def test_sixteen_of_twenty(self):
        x = np.random.default_rng(0).normal(size=(20, 3))
        cfg = EncoderConfig()
        assert prefix_length(20, 0.8) == 16
        out = prefix_and_interpolate(x, cfg)
        assert out.shape == (100, 3)
        np.testing.assert_allclose(out, minmax_columns(resample_columns(x[:16], 100)), atol=1e-15)

    def test_ceiling_clamps(self):
        assert prefix_length(20, 0.99) == 20
        assert prefix_length(15, 0.8) == 12

    def test_constant(self):
        out = prefix_and_interpolate(np.full((20, 2), 3.0), EncoderConfig())
        assert out.shape == (100, 2) and (out == 0.5).all()

    def test_too_short(self):
        with pytest.raises(DomainError):
            prefix_and_interpolate(np.zeros((1, 3)), EncoderConfig())


class TestSlice:
    def test_seventeen_windows(self):
        m = np.random.default_rng(0).random((100, 3))
        segs = slice_multiscale(m, 0.2, 5)
        assert segs.shape == (17, 3, 20)
        for k in range(17):
            np.testing.assert_array_equal(segs[k], m[5 * k : 5 * k + 20].T)

    def test_single_fit(self):
        assert slice_multiscale(np.zeros((100, 2)), 1.0, 5).shape == (1, 2, 100)

    def test_too_long(self):
        with pytest.raises(DomainError):
            slice_multiscale(np.zeros((10, 2)), 1.5, 1)

    @given(st.integers(10, 120), st.floats(0.05, 1.0), st.integers(1, 10))
    def test_count_and_cover(self, L, alpha, stride):
        w = int(round(alpha * L))
        if w < 2:
            return
        m = np.arange(L, dtype=float)[:, None]
        segs = slice_multiscale(m, alpha, stride)
        assert len(segs) == (L - w) // stride + 1
        if stride <= w and (L - w) % stride == 0:
            covered = set(segs[:, 0, :].ravel().astype(int))
            assert covered == set(range(L))


class TestKMeans2:
    def test_two_families_split(self):
        segs = two_family_segments(np.random.default_rng(0))
        labels, _ = dtw_kmeans2(segs, np.random.default_rng(0))
        assert len(set(labels[:6])) == 1 and len(set(labels[6:])) == 1 and labels[0] != labels[6]

    def test_identical_segments(self):
        segs = np.repeat(np.random.default_rng(1).random((1, 2, 15)), 5, axis=0)
        labels, _ = dtw_kmeans2(segs, np.random.default_rng(0))
        assert set(labels) == {0, 1}

    def test_fixed_point(self):
        segs = np.random.default_rng(2).normal(size=(10, 2, 12)).cumsum(axis=2)
        labels, cents = dtw_kmeans2(segs, np.random.default_rng(3))
        dist = np.array([[dtw_cost(np.ascontiguousarray(s.T), c) for c in cents] for s in segs])
        np.testing.assert_array_equal(np.argmin(dist, axis=1), labels)

    def test_deterministic(self):
        segs = np.random.default_rng(4).normal(size=(9, 3, 10))
        a, _ = dtw_kmeans2(segs, np.random.default_rng(7))
        b, _ = dtw_kmeans2(segs, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_too_few(self):
        with pytest.raises(DomainError):
            dtw_kmeans2(np.zeros((1, 2, 10)), np.random.default_rng(0))


class TestTriplets:
    def test_size_five(self):
        labels = np.array([0] * 5 + [1] * 5)
        dist = np.random.default_rng(0).random((10, 10))
        dist = dist + dist.T
        np.fill_diagonal(dist, 0)
        trips = select_triplets(labels, dist)
        assert [len(t.positives) for t in trips] == [1, 1]

    def test_sizes_seven_three(self):
        labels = np.array([0] * 7 + [1] * 3)
        dist = np.abs(np.subtract.outer(np.arange(10.0), np.arange(10.0)))
        t0, t1 = select_triplets(labels, dist)
        assert (len(t0.positives), len(t0.negatives)) == (2, 1)
        assert (len(t1.positives), len(t1.negatives)) == (1, 2)
        assert t0.anchor == 3 and t0.positives == [2, 4] and t0.negatives == [9]
        assert t1.anchor == 8 and t1.negatives == [0, 1]
        for t in (t0, t1):
            assert t.anchor not in t.positives + t.negatives

    def test_medoid_oracle(self):
        rng = np.random.default_rng(5)
        segs = [rng.normal(size=(5, 1)) for _ in range(4)] + [rng.normal(3, 1, size=(5, 1)) for _ in range(2)]
        n = len(segs)
        dist = np.zeros((n, n))
        for i, j in itertools.combinations(range(n), 2):
            dist[i, j] = dist[j, i] = brute_force_dtw(segs[i], segs[j])
        sums = {i: sum(dist[i, j] for j in range(4)) for i in range(4)}
        want = min(sums, key=lambda i: (sums[i], i))
        (t0, _) = select_triplets(np.array([0, 0, 0, 0, 1, 1]), dist)
        assert t0.anchor == want

    def test_empty_cluster_skipped(self, caplog):
        assert select_triplets(np.zeros(4, dtype=int), np.zeros((4, 4))) == []
        assert "triplet skipped" in caplog.text


class TestNetwork:
    def test_zero_input_zero_bias(self):
        model = build_encoder(3, EncoderConfig())
        with torch.no_grad():
            for name, p in model.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
        z = embed(model, np.zeros((3, 20)))
        assert z.shape == (64,) and (z == 0).all()

    @pytest.mark.parametrize("length", [3, 20, 57])
    def test_shape(self, length):
        model = build_encoder(2, EncoderConfig(emb_dim=16))
        assert embed(model, np.random.default_rng(0).random((4, 2, length))).shape == (4, 16)

    def test_too_short(self):
        with pytest.raises(DomainError):
            embed(build_encoder(2, EncoderConfig()), np.zeros((2, 2)))

    def test_init_bounds_and_seed(self):
        a = build_encoder(3, EncoderConfig(rng_seed=1))
        b = build_encoder(3, EncoderConfig(rng_seed=1))
        for (name, p), q in zip(a.named_parameters(), b.parameters()):
            assert torch.equal(p, q)
        w = a.blocks[0].conv.weight
        assert w.abs().max() <= 1 / math.sqrt(3 * 3)


class TestLoss:
    def test_zero_numerator(self):
        za = np.zeros(4)
        zp = np.zeros((3, 4))
        zn = np.tile(np.eye(4)[0], (2, 1))
        assert float(triplet_loss(za, zp, zn)) == pytest.approx(math.log(0.2), abs=1e-12)

    def test_scalar_singletons(self):
        assert float(triplet_loss([0.0], [[0.0]], [[2.0]])) == pytest.approx(math.log(0.2), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        za, zp, zn = rng.normal(size=6), rng.normal(size=(3, 6)), rng.normal(size=(4, 6))
        assert float(triplet_loss(za, zp, zn)) == pytest.approx(
            loss_oracle(za, zp.tolist(), zn.tolist()), abs=1e-12)

    @settings(max_examples=30)
    @given(st.integers(0, 10_000))
    def test_rotation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        za, zp, zn = rng.normal(size=5), rng.normal(size=(2, 5)), rng.normal(size=(3, 5))
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        shift = rng.normal(size=5)
        a = float(triplet_loss(za, zp, zn))
        b = float(triplet_loss(q @ za + shift, zp @ q.T + shift, zn @ q.T + shift))
        assert a == pytest.approx(b, abs=1e-10)

    def test_monotone(self):
        za = np.zeros(2)
        zn = np.array([[3.0, 0.0]])
        ap = [float(triplet_loss(za, [[r, 0.0]], zn)) for r in (0.1, 0.5, 1.0, 2.0)]
        an = [float(triplet_loss(za, [[0.5, 0.0]], [[r, 0.0]])) for r in (0.5, 1.0, 2.0, 4.0)]
        assert ap == sorted(ap) and len(set(ap)) == 4
        assert an == sorted(an, reverse=True) and len(set(an)) == 4

    def test_empty_sets(self):
        with pytest.raises(DomainError):
            triplet_loss(np.zeros(2), np.zeros((0, 2)), np.ones((1, 2)))


def gradient_check(cfg_kw, n_subseq=3, seed=0, step=1e-5):
    """Max relative error between autograd and central differences over every parameter."""
    cfg = EncoderConfig(**cfg_kw)
    rng = np.random.default_rng(seed)
    mats = [prefix_and_interpolate(rng.normal(size=(20, 3)).cumsum(axis=0), cfg) for _ in range(n_subseq)]
    units = mine_units(mats, cfg, np.random.default_rng(seed))
    model = build_encoder(3, cfg)
    units_loss(model, units, cfg).backward()
    errors = []
    with torch.no_grad():
        for p in model.parameters():
            for idx in np.ndindex(*p.shape):
                g = p.grad[idx].item()
                orig = p[idx].item()
                p[idx] = orig + step
                up = units_loss(model, units, cfg).item()
                p[idx] = orig - step
                down = units_loss(model, units, cfg).item()
                p[idx] = orig
                num = (up - down) / (2 * step)
                # floor: central differences cannot resolve gradients below ~1e-11 at this step
                errors.append(abs(g - num) / max(abs(g), abs(num), 1e-6))
    return errors


class TestGradient:
    def test_finite_differences(self):
        errors = gradient_check(SMALL)
        assert len(errors) >= 200
        assert max(errors) < 1e-4


def tiny_pattern_set(n_per=10, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for fam in (0, 1):
        for _ in range(n_per):
            n = int(rng.integers(18, 23))
            t = np.linspace(0, 1, n)
            price = np.sin(2 * np.pi * t * (1 + fam)) * rng.uniform(0.8, 1.2) + rng.normal(0, 0.05, n)
            out.append(np.column_stack([price, t if fam else 1 - t, rng.normal(0.5, 0.1, n)]))
    return out


class TestTraining:
    def test_loss_decreases(self):
        tr = train_encoder(tiny_pattern_set(), EncoderConfig(epochs=10))
        assert len(tr.loss_trace) == 10 and np.isfinite(tr.loss_trace).all()
        assert tr.loss_trace[9] < tr.loss_trace[0]

    def test_bit_identical(self):
        cfg = EncoderConfig(epochs=3, **{k: v for k, v in SMALL.items() if k != "epochs"})
        a = train_encoder(tiny_pattern_set(4), cfg)
        b = train_encoder(tiny_pattern_set(4), cfg)
        assert a.loss_trace == b.loss_trace
        for p, q in zip(a.model.parameters(), b.model.parameters()):
            assert torch.equal(p, q)

    def test_zero_epochs(self):
        cfg = EncoderConfig(**SMALL)
        tr = train_encoder(tiny_pattern_set(3), cfg)
        fresh = build_encoder(3, cfg)
        assert tr.loss_trace == []
        for p, q in zip(tr.model.parameters(), fresh.parameters()):
            assert torch.equal(p, q)

    def test_empty(self):
        with pytest.raises(TrainingError):
            train_encoder([], EncoderConfig())

    def test_no_triplets(self):
        # two slices per unit always split into singleton clusters
        with pytest.raises(TrainingError):
            train_encoder([np.ones((20, 2))], EncoderConfig(alphas=(0.9,), slice_stride=10))

    def test_roundtrip(self, tmp_path):
        cfg = EncoderConfig(epochs=2, **{k: v for k, v in SMALL.items() if k != "epochs"})
        tr = train_encoder(tiny_pattern_set(3), cfg)
        back = params_from_doc(params_to_doc(tr))
        x = np.random.default_rng(0).random((5, 3, 12))
        np.testing.assert_array_equal(embed(tr.model, x), embed(back.model, x))
        assert back.config == cfg and back.loss_trace == tr.loss_trace
        write_loss_csv(tmp_path / "loss.csv", tr.loss_trace)
        rows = (tmp_path / "loss.csv").read_text().splitlines()
        assert rows[0] == "epoch,loss" and len(rows) == 3
        assert float(rows[1].split(",")[1]) == tr.loss_trace[0]
