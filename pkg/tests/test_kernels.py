import numpy as np
import pytest

from cdnots.kernels import (
    apply_fourier_features,
    center_gram,
    median_heuristic_bandwidth,
    pivoted_cholesky,
    rbf_gram,
    sample_fourier_features,
)


class TestMedianHeuristic:
    def test_three_points_by_hand(self):
        # distances {1, 1, 2}, median 1
        assert median_heuristic_bandwidth(np.array([0.0, 1.0, 2.0])) == 1.0

    def test_only_first_500_points_matter(self):
        rng = np.random.default_rng(0)
        base = rng.normal(size=(500, 2))
        outliers = base[rng.integers(0, 500, size=100)] + 1e6
        with_tail = np.vstack([base, outliers])
        assert median_heuristic_bandwidth(with_tail) == median_heuristic_bandwidth(base)

    def test_identical_points_error(self):
        with pytest.raises(ValueError, match="identical"):
            median_heuristic_bandwidth(np.array([3.0, 3.0]))

    def test_mostly_tied_points_fall_back_to_positive(self):
        bw = median_heuristic_bandwidth(np.array([0.0, 0.0, 0.0, 0.0, 1.0]))
        assert bw > 0


class TestRbfGram:
    def test_identical_points_all_ones(self):
        g = rbf_gram(np.zeros((4, 2)), 1.0)
        assert np.array_equal(g, np.ones((4, 4)))

    def test_two_points_known_value(self):
        sigma = 0.7
        g = rbf_gram(np.array([0.0, sigma * np.sqrt(2.0)]), sigma)
        assert g[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_invariants_random(self, rng):
        pts = rng.normal(size=(60, 3))
        g = rbf_gram(pts, median_heuristic_bandwidth(pts))
        n = g.shape[0]
        assert np.max(np.abs(g - g.T)) <= 1e-12
        assert np.allclose(np.diag(g), 1.0)
        assert np.linalg.eigvalsh(g).min() >= -1e-8 * n

    def test_bandwidth_positive_required(self):
        with pytest.raises(ValueError):
            rbf_gram(np.zeros((3, 1)), 0.0)


class TestCentering:
    def test_all_ones_goes_to_zero(self):
        out = center_gram(np.ones((5, 5)))
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_idempotent(self, rng):
        g = rbf_gram(rng.normal(size=(40, 2)), 1.0)
        once = center_gram(g)
        assert np.allclose(center_gram(once), once, atol=1e-10)

    def test_row_and_column_sums_vanish(self, rng):
        g = rbf_gram(rng.normal(size=(50, 2)), 1.3)
        out = center_gram(g)
        n = out.shape[0]
        assert np.max(np.abs(out.sum(axis=0))) <= 1e-8 * n
        assert np.max(np.abs(out.sum(axis=1))) <= 1e-8 * n

    def test_psd_preserved(self, rng):
        a = rng.normal(size=(30, 30))
        psd = a @ a.T
        out = center_gram(psd)
        assert np.max(np.abs(out - out.T)) <= 1e-10
        assert np.linalg.eigvalsh(out).min() >= -1e-8 * 30


class TestFourierFeatures:
    def test_deterministic_per_seed(self, rng):
        pts = rng.normal(size=(20, 2))
        f1 = sample_fourier_features(2, 8, 1.0, seed=42)
        f2 = sample_fourier_features(2, 8, 1.0, seed=42)
        assert np.array_equal(
            apply_fourier_features(f1, pts), apply_fourier_features(f2, pts)
        )

    def test_large_m_approximates_rbf(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(80, 1))
        bw = median_heuristic_bandwidth(pts)
        exact = rbf_gram(pts, bw)
        feats = apply_fourier_features(sample_fourier_features(1, 2000, bw, seed=1), pts)
        approx = feats @ feats.T
        assert np.mean(np.abs(approx - exact)) < 0.05

    def test_single_feature_range(self, rng):
        fmap = sample_fourier_features(1, 1, 1.0, seed=0)
        vals = apply_fourier_features(fmap, rng.normal(size=(50, 1)))
        assert vals.shape == (50, 1)
        assert np.all(np.abs(vals) <= fmap.scale + 1e-12)

    def test_error_shrinks_with_m(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(60, 1))
        bw = median_heuristic_bandwidth(pts)
        exact = rbf_gram(pts, bw)
        errors = []
        for m in (10, 100, 1000):
            feats = apply_fourier_features(sample_fourier_features(1, m, bw, seed=5), pts)
            errors.append(np.mean(np.abs(feats @ feats.T - exact)))
        assert errors[0] > errors[1] > errors[2]


def test_pivoted_cholesky_reconstructs(rng):
    pts = rng.normal(size=(120, 2))
    gram = center_gram(rbf_gram(pts, median_heuristic_bandwidth(pts)))
    factor = pivoted_cholesky(gram, rtol=1e-12)
    assert np.max(np.abs(factor @ factor.T - gram)) < 1e-6
