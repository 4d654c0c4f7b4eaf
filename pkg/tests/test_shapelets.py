import numpy as np
import pytest

from patternforge.encoder import EncoderConfig, build_encoder
from patternforge.errors import DomainError, PipelineError
from patternforge.shapelets import (
    Candidate,
    LatentCloud,
    Shapelet,
    ShapeletConfig,
    bank_from_json,
    bank_to_json,
    build_latent_cloud,
    cluster_candidates,
    purity,
    score_and_filter,
    utility_scores,
)

ENC = EncoderConfig(conv_channels=4, emb_dim=8, L=40, alphas=(0.25, 0.5), slice_stride=5)


def blob_cloud(g=4, per=15, seed=0):
    rng = np.random.default_rng(seed)
    centres = rng.normal(0, 20, size=(g, 5))
    emb = np.concatenate([c + rng.normal(0, 0.5, size=(per, 5)) for c in centres])
    n = len(emb)
    segs = [np.full((2, 4), float(i)) for i in range(n)]
    return LatentCloud(emb, segs, [(i, 0.2, 0) for i in range(n)], np.repeat(np.arange(g), per)), centres


def fake_cloud(curves, labels):
    n = len(curves)
    return LatentCloud(np.zeros((n, 2)), list(curves), [(i, 0.2, 0) for i in range(n)], np.asarray(labels))


class TestCloud:
    def test_size(self):
        rng = np.random.default_rng(0)
        subs = [rng.normal(size=(20, 3)) for _ in range(4)]
        cloud = build_latent_cloud(build_encoder(3, ENC), subs, [0, 1, 0, 1], ENC)
        per_sub = (40 - 10) // 5 + 1 + (40 - 20) // 5 + 1
        assert len(cloud) == 4 * per_sub == cloud.embeddings.shape[0]
        assert cloud.sources[0] == (0, 0.25, 0)
        assert list(cloud.labels[:per_sub]) == [0] * per_sub

    def test_empty(self):
        cloud = build_latent_cloud(build_encoder(3, ENC), [], [], ENC)
        assert len(cloud) == 0
        with pytest.raises(DomainError):
            cluster_candidates(cloud, ShapeletConfig(g=2))

    def test_identical_subsequences(self):
        x = np.random.default_rng(1).normal(size=(20, 3))
        cloud = build_latent_cloud(build_encoder(3, ENC), [x, x.copy()], [0, 0], ENC)
        half = len(cloud) // 2
        np.testing.assert_array_equal(cloud.embeddings[:half], cloud.embeddings[half:])


class TestCandidates:
    def test_blobs(self):
        cloud, centres = blob_cloud()
        cands = cluster_candidates(cloud, ShapeletConfig(g=4))
        assert len(cands) == 4
        blob_of = cloud.labels
        assert sorted(blob_of[c.representative] for c in cands) == [0, 1, 2, 3]
        for c in cands:
            assert set(blob_of[c.members]) == {blob_of[c.representative]}
        assert sum(len(c.members) for c in cands) == len(cloud)

    def test_singletons(self):
        cloud, _ = blob_cloud(g=2, per=3)
        cands = cluster_candidates(cloud, ShapeletConfig(g=6))
        assert sorted(c.representative for c in cands) == list(range(6))
        assert all(list(c.members) == [c.representative] for c in cands)

    def test_deterministic(self):
        cloud, _ = blob_cloud(seed=3)
        a = cluster_candidates(cloud, ShapeletConfig(g=5, rng_seed=7))
        b = cluster_candidates(cloud, ShapeletConfig(g=5, rng_seed=7))
        assert [(c.cluster, c.representative) for c in a] == [(c.cluster, c.representative) for c in b]


class TestScore:
    def test_purity(self):
        assert purity(np.array([2, 2, 2])) == (1.0, 2)
        assert purity(np.array([1, 0, 1, 0])) == (0.5, 0)

    def test_single_label_retained(self):
        cloud = fake_cloud([np.zeros((1, 3)), np.ones((1, 3))], [0, 1])
        cands = [Candidate(0, np.array([0]), 0), Candidate(1, np.array([1]), 1)]
        out = score_and_filter(cands, cloud, 2)
        assert len(out) == 2 and all(s.purity == 1.0 for s in out)

    def test_uniform_mix_rejected(self):
        cloud = fake_cloud([np.zeros((1, 3))] * 6, [0, 1, 2, 0, 1, 2])
        cands = [Candidate(0, np.arange(3), 0), Candidate(1, np.arange(3, 6), 3)]
        with pytest.raises(PipelineError):
            score_and_filter(cands, cloud, 3)

    def test_utility_hand_computed(self):
        # 1 x 2 curves a=(0,0), b=(1,0), c=(0,2): squared distances ab=1, ac=4, bc=5
        curves = [np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]), np.array([[0.0, 2.0]])]
        sizes = [3, 1, 2]
        np.testing.assert_allclose(utility_scores(curves, sizes), [3 * 5, 1 * 6, 2 * 9])
        cloud = fake_cloud(curves + [curves[0]] * 3, [0, 1, 2, 0, 0, 2])
        cands = [Candidate(0, np.array([0, 3, 4]), 0), Candidate(1, np.array([1]), 1),
                 Candidate(2, np.array([2, 5]), 2)]
        ranked = score_and_filter(cands, cloud, 3)
        assert [s.utility for s in ranked] == [18.0, 15.0, 6.0]
        assert [s.source[0] for s in ranked] == [2, 0, 1]

    def test_mixed_lengths_resampled(self):
        short = np.array([[0.0, 1.0]])
        long_ = np.array([[0.0, 0.5, 1.0]])
        u = utility_scores([short, long_], [1, 1])
        np.testing.assert_allclose(u, [0.0, 0.0], atol=1e-15)

    def test_linear_in_size_and_scale_invariant_order(self):
        rng = np.random.default_rng(0)
        curves = [rng.random((2, 5)) for _ in range(4)]
        sizes = [3, 7, 2, 5]
        u = utility_scores(curves, sizes)
        np.testing.assert_allclose(utility_scores(curves, [2 * s for s in sizes]), 2 * u)
        u_scaled = utility_scores([3 * c for c in curves], sizes)
        assert list(np.argsort(u)) == list(np.argsort(u_scaled))

    def test_ranking_is_permutation_of_retained(self):
        cloud, _ = blob_cloud(g=5, per=8, seed=2)
        cands = cluster_candidates(cloud, ShapeletConfig(g=5))
        ranked = score_and_filter(cands, cloud, 5)
        assert sorted(s.source[0] for s in ranked) == sorted(c.representative for c in cands)
        assert [s.utility for s in ranked] == sorted((s.utility for s in ranked), reverse=True)

    def test_json_roundtrip(self):
        s = Shapelet(np.arange(6.0).reshape(2, 3), (4, 0.4, 10), 12, 0.75, 3.5, 1)
        back = bank_from_json(bank_to_json([s], ShapeletConfig(), 3))[0]
        np.testing.assert_array_equal(back.values, s.values)
        assert (back.source, back.cluster_size, back.purity, back.utility, back.label) == \
            (s.source, s.cluster_size, s.purity, s.utility, s.label)
