import numpy as np
import pytest

from regen.audio_io import Waveform
from regen.errors import ArgumentError
from regen.metrics import (GaussianSummary, conditional_fdsd, frechet_distance,
                           stub_embedding, summarize_activations)


def gauss(mean, cov, count=100):
    return GaussianSummary(np.atleast_1d(mean), np.atleast_2d(cov), count)


class TestFrechetDistance:
    def test_identical_summaries_give_zero(self):
        rng = np.random.default_rng(0)
        emb = rng.standard_normal((50, 4))
        s = summarize_activations(emb)
        assert frechet_distance(s, s) == pytest.approx(0.0, abs=1e-8)

    def test_unit_mean_shift_1d(self):
        a = gauss(0.0, 1.0)
        b = gauss(1.0, 1.0)
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-8)

    def test_variance_gap_1d(self):
        a = gauss(0.0, 1.0)
        b = gauss(0.0, 4.0)
        # 0 + (1 + 4 - 2*2) = 1
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-8)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = summarize_activations(rng.standard_normal((40, 5)))
            b = summarize_activations(rng.standard_normal((40, 5)) * 1.5 + 0.3)
            d_ab = frechet_distance(a, b)
            d_ba = frechet_distance(b, a)
            assert d_ab >= 0
            assert d_ab == pytest.approx(d_ba, rel=1e-9, abs=1e-10)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(2)
        emb_a = rng.standard_normal((60, 4))
        emb_b = rng.standard_normal((60, 4)) * 0.7 + 0.2
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        d0 = frechet_distance(summarize_activations(emb_a),
                              summarize_activations(emb_b))
        d1 = frechet_distance(summarize_activations(emb_a @ q.T),
                              summarize_activations(emb_b @ q.T))
        assert d1 == pytest.approx(d0, abs=1e-6)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ArgumentError):
            frechet_distance(gauss(0.0, 1.0), gauss([0.0, 0.0], np.eye(2)))


class TestSummaries:
    def test_constant_rows_zero_covariance(self):
        s = summarize_activations(np.ones((10, 3)) * 2.5)
        assert np.allclose(s.covariance, 0)
        assert np.allclose(s.mean, 2.5)

    def test_two_point_hand_arithmetic(self):
        s = summarize_activations(np.array([[0.0], [2.0]]))
        assert s.mean[0] == 1.0
        assert s.covariance[0, 0] == 2.0  # unbiased: ((1)^2+(1)^2)/(2-1)

    def test_large_sample_recovers_standard_normal(self):
        rng = np.random.default_rng(3)
        s = summarize_activations(rng.standard_normal((100_000, 4)))
        assert np.abs(s.mean).max() < 0.02
        assert np.abs(np.diag(s.covariance) - 1).max() < 0.05

    def test_too_few_rows_rejected(self):
        with pytest.raises(ArgumentError):
            summarize_activations(np.ones((1, 4)))

    def test_rank_deficiency_warns(self):
        with pytest.warns(UserWarning, match="rank-deficient"):
            summarize_activations(np.random.default_rng(0).standard_normal((3, 8)))

    def test_asymmetric_covariance_rejected(self):
        cov = np.array([[1.0, 0.5], [0.1, 1.0]])
        with pytest.raises(ArgumentError, match="symmetric"):
            GaussianSummary(np.zeros(2), cov, 10)


class TestConditionalFdsd:
    def test_identical_pairs_give_zero(self):
        rng = np.random.default_rng(4)
        emb = rng.standard_normal((30, 5))
        assert conditional_fdsd(emb, emb.copy()) == pytest.approx(0.0, abs=1e-8)

    def test_constant_offset_gives_d_c_squared(self):
        rng = np.random.default_rng(5)
        ref = rng.standard_normal((40, 6))
        c = 0.7
        gen = ref + c
        assert conditional_fdsd(gen, ref) == pytest.approx(6 * c * c, abs=1e-8)

    def test_pairing_permutation_invariance(self):
        rng = np.random.default_rng(6)
        gen = rng.standard_normal((25, 4))
        ref = rng.standard_normal((25, 4))
        perm = rng.permutation(25)
        assert conditional_fdsd(gen, ref) == pytest.approx(
            conditional_fdsd(gen[perm], ref[perm]), abs=1e-10)

    def test_mismatched_counts_rejected(self):
        with pytest.raises(ArgumentError):
            conditional_fdsd(np.zeros((5, 3)), np.zeros((6, 3)))


class TestStubEmbedding:
    def test_shape_and_determinism(self):
        t = np.arange(16000) / 16000
        w = Waveform(np.sin(2 * np.pi * 300 * t), 16000)
        a = stub_embedding(w)
        b = stub_embedding(w)
        assert a.shape == (80,)
        assert np.array_equal(a, b)

    def test_resamples_other_rates(self):
        t = np.arange(24000) / 24000
        w = Waveform(np.sin(2 * np.pi * 300 * t), 24000)
        assert stub_embedding(w).shape == (80,)
