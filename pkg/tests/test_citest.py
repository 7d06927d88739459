import numpy as np
import pytest
from scipy import stats

from cdnots.citest import (
    cmiknn_test,
    kcit_test,
    parcorr_test,
    rcot_test,
    weighted_chisq_sf_hbe,
    weighted_chisq_sf_sw,
)
from oracles import kcit_permutation_pvalue


class TestWeightedChisqSurvival:
    def test_single_weight_matches_chi2(self):
        # chi2(1) survival at 3.841 is 0.05002
        expected = stats.chi2.sf(3.841, 1)
        assert weighted_chisq_sf_sw([1.0], 3.841) == pytest.approx(expected, abs=1e-10)
        assert weighted_chisq_sf_hbe([1.0], 3.841) == pytest.approx(expected, abs=1e-10)
        assert expected == pytest.approx(0.05, abs=1e-3)

    def test_two_equal_weights_closed_form(self):
        # sum of two unit weights is chi2(2); survival at t is exp(-t/2)
        t = 2.0 * np.log(2.0)
        assert weighted_chisq_sf_sw([1.0, 1.0], t) == pytest.approx(0.5, abs=1e-6)
        assert weighted_chisq_sf_hbe([1.0, 1.0], t) == pytest.approx(0.5, abs=1e-6)

    @pytest.mark.parametrize("c", [0.1, 1.0, 7.5])
    def test_scale_equivariance(self, c):
        w = np.array([2.0, 1.0, 0.5])
        t = 4.2
        for sf in (weighted_chisq_sf_sw, weighted_chisq_sf_hbe):
            assert sf(c * w, c * t) == pytest.approx(sf(w, t), rel=1e-12)

    @pytest.mark.parametrize("k", [1, 3, 10])
    def test_equal_weights_exact(self, k):
        # k equal weights reduce both approximations to the exact chi2(k)
        for t in (0.5, float(k), 3.0 * k):
            exact = stats.chi2.sf(t, k)
            assert weighted_chisq_sf_sw(np.ones(k), t) == pytest.approx(exact, abs=1e-6)
            assert weighted_chisq_sf_hbe(np.ones(k), t) == pytest.approx(exact, abs=1e-6)

    def test_negative_t_returns_one(self):
        assert weighted_chisq_sf_sw([1.0, 2.0], -0.5) == 1.0
        assert weighted_chisq_sf_hbe([1.0, 2.0], -0.5) == 1.0

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            weighted_chisq_sf_sw([], 1.0)
        with pytest.raises(ValueError):
            weighted_chisq_sf_hbe([0.0, 0.0], 1.0)


class TestParcorr:
    def test_perfect_dependence(self, rng):
        x = rng.normal(size=50)
        assert parcorr_test(x, x).p_value < 1e-10

    def test_deterministic_conditioning_degenerates(self, rng):
        x = rng.normal(size=50)
        res = parcorr_test(x, x, x)
        assert res.degenerate
        assert res.p_value == 1.0

    def test_conditional_null_calibration(self):
        # precision matrix with a zero (x, y) entry: x indep y given z
        theta = np.array([[2.0, 0.0, 1.0], [0.0, 2.0, 1.0], [1.0, 1.0, 2.0]])
        cov = np.linalg.inv(theta)
        chol = np.linalg.cholesky(cov)
        rng = np.random.default_rng(11)
        rejections = 0
        trials = 1000
        for _ in range(trials):
            sample = rng.normal(size=(200, 3)) @ chol.T
            p = parcorr_test(sample[:, 0], sample[:, 1], sample[:, 2:]).p_value
            rejections += p <= 0.05
        assert 0.03 <= rejections / trials <= 0.07

    def test_rank_deficient_conditioning(self, rng):
        x = rng.normal(size=60)
        y = rng.normal(size=60)
        z = rng.normal(size=60)
        dup = np.column_stack([z, z])  # singular design, pseudo-inverse path
        res = parcorr_test(x, y, dup)
        assert 0.0 < res.p_value <= 1.0

    def test_needs_enough_samples(self, rng):
        with pytest.raises(ValueError):
            parcorr_test(rng.normal(size=5), rng.normal(size=5), rng.normal(size=(5, 2)))


class TestKcit:
    def test_maximal_dependence(self, rng):
        x = rng.normal(size=200)
        assert kcit_test(x, x).p_value < 1e-6

    def test_null_calibration_small_n(self):
        rng = np.random.default_rng(21)
        trials = 500
        rejections = 0
        for _ in range(trials):
            x = rng.normal(size=200)
            y = rng.normal(size=200)
            rejections += kcit_test(x, y, approx="hbe").p_value <= 0.05
        assert 0.02 <= rejections / trials <= 0.09

    def test_conditional_chain_level(self):
        # x -> z -> y with a cubic link; x indep y given z
        rng = np.random.default_rng(33)
        trials = 200
        rejections = 0
        for _ in range(trials):
            x = rng.normal(size=300)
            z = 0.8 * x + 0.6 * rng.normal(size=300)
            y = z ** 3 + rng.normal(size=300)
            rejections += kcit_test(x, y, z, approx="hbe").p_value <= 0.05
        assert rejections / trials <= 0.10

    def test_conditional_pvalues_match_permutation_oracle(self):
        # paired Kolmogorov (sup) distance between the analytic p-values and
        # the permutation-null p-values on the same datasets
        rng = np.random.default_rng(7)
        analytic, oracle = [], []
        for i in range(20):
            x = rng.normal(size=150)
            z = 0.8 * x + 0.6 * rng.normal(size=150)
            y = z ** 3 + rng.normal(size=150)
            analytic.append(kcit_test(x, y, z, approx="hbe").p_value)
            oracle.append(kcit_permutation_pvalue(x, y, z, n_perm=1000, seed=i))
        sup_dist = max(abs(a - b) for a, b in zip(analytic, oracle))
        assert sup_dist < 0.15

    def test_symmetry(self, rng):
        x = rng.normal(size=150)
        y = x + rng.normal(size=150)
        z = rng.normal(size=(150, 1))
        assert kcit_test(x, y, z).p_value == kcit_test(y, x, z).p_value

    def test_row_permutation_invariance(self, rng):
        # moderate dependence so the p-value sits away from the extreme tail,
        # where any change of floating point summation order is amplified
        x = rng.normal(size=300)
        y = 0.15 * x + rng.normal(size=300)
        z = rng.normal(size=300)
        perm = rng.permutation(300)
        base = kcit_test(x, y).p_value
        shuffled = kcit_test(x[perm], y[perm]).p_value
        assert shuffled == pytest.approx(base, abs=1e-10)
        assert parcorr_test(x[perm], y[perm], z[perm]).p_value == pytest.approx(
            parcorr_test(x, y, z).p_value, abs=1e-10
        )

    def test_minimum_sample_size(self, rng):
        with pytest.raises(ValueError):
            kcit_test(rng.normal(size=5), rng.normal(size=5))


class TestRcot:
    def test_deterministic_per_seed(self, rng):
        x = rng.normal(size=400)
        y = x + rng.normal(size=400)
        z = rng.normal(size=(400, 2))
        a = rcot_test(x, y, z, seed=9)
        b = rcot_test(x, y, z, seed=9)
        assert a.p_value == b.p_value and a.statistic == b.statistic

    def test_seed_symmetry(self, rng):
        x = rng.normal(size=300)
        y = rng.normal(size=300)
        assert rcot_test(x, y, seed=4).p_value == rcot_test(y, x, seed=4).p_value

    def test_null_calibration(self):
        rng = np.random.default_rng(5)
        trials = 500
        rejections = 0
        for i in range(trials):
            x = rng.normal(size=1000)
            y = rng.normal(size=1000)
            rejections += rcot_test(x, y, seed=i).p_value <= 0.05
        assert 0.02 <= rejections / trials <= 0.09

    def test_power_on_sine_dependence(self):
        hits = 0
        for i in range(100):
            rng = np.random.default_rng(i)
            x = rng.uniform(-1.0, 1.0, size=1000)
            y = np.sin(4.0 * x) + 0.1 * rng.normal(size=1000)
            hits += rcot_test(x, y, seed=i).p_value < 0.01
        assert hits >= 95


class TestCmiknn:
    def test_maximal_dependence(self, rng):
        x = rng.normal(size=500)
        res = cmiknn_test(x, x, n_perm=200, seed=0)
        assert res.p_value <= 2.0 / 201.0

    def test_nonlinear_power_vs_parcorr(self):
        # zero correlation but strong dependence: y = x^2 on symmetric x
        cmi_hits = parcorr_hits = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            x = rng.uniform(-1.0, 1.0, size=500)
            y = x ** 2 + 0.1 * rng.normal(size=500)
            cmi_hits += cmiknn_test(x, y, n_perm=200, seed=seed).p_value <= 0.05
            parcorr_hits += parcorr_test(x, y).p_value <= 0.05
        assert cmi_hits >= 45
        assert parcorr_hits <= 5

    def test_determinism(self, rng):
        x = rng.normal(size=200)
        y = rng.normal(size=200)
        z = rng.normal(size=200)
        assert (
            cmiknn_test(x, y, z, n_perm=60, seed=3).p_value
            == cmiknn_test(x, y, z, n_perm=60, seed=3).p_value
        )

    def test_k_validation(self, rng):
        x = rng.normal(size=30)
        with pytest.raises(ValueError):
            cmiknn_test(x, x, k=30)
        with pytest.raises(ValueError):
            cmiknn_test(x, x, k=14)  # violates n > 2k + 2


def test_pvalues_never_exactly_zero(rng):
    x = rng.normal(size=300)
    for res in (
        parcorr_test(x, x),
        kcit_test(x, 2.0 * x + 1e-3 * rng.normal(size=300)),
    ):
        assert res.p_value >= 1e-300
