import numpy as np
import pytest

from cdnots import linearity_test, stationarity_report
from cdnots.graph import DIRECTED, TIME_NODE, EdgeInfo, LaggedNode, MixedGraph


def graph_with(edges, n_vars=3, max_lag=1):
    from cdnots.graph import canonical_pair

    g = MixedGraph(n_vars, max_lag, [f"v{i}" for i in range(n_vars)])
    for u, v in edges:
        key, shift = canonical_pair(u, v)
        g._edges[key] = EdgeInfo(DIRECTED, v.shifted(-shift))
    return g


class TestStationarityReport:
    def test_empty_graph_all_stationary(self):
        report = stationarity_report(graph_with([]))
        assert report == [("v0", False), ("v1", False), ("v2", False)]

    def test_single_time_edge(self):
        g = graph_with([(TIME_NODE, LaggedNode(0, 0))])
        assert stationarity_report(g) == [("v0", True), ("v1", False), ("v2", False)]

    def test_lagged_self_link_without_time_edge(self):
        # the shape produced by a mean-reverting series analyzed with one lag
        g = graph_with([(LaggedNode(0, 1), LaggedNode(0, 0))], n_vars=1)
        assert stationarity_report(g) == [("v0", False)]

    def test_pure_readout(self):
        g = graph_with([(TIME_NODE, LaggedNode(1, 0))])
        assert stationarity_report(g) == stationarity_report(g)


class TestLinearityTest:
    def test_linear_relationship_accepted(self):
        accepted = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=500)
            y = 2.0 * x + rng.normal(size=500)
            report = linearity_test(y, x, seed=seed)
            accepted += not report.reject
        assert accepted >= 45

    def test_quadratic_relationship_rejected(self):
        rejected = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            x = rng.uniform(-1.0, 1.0, size=500)
            y = x ** 2 + 0.3 * rng.normal(size=500)
            report = linearity_test(y, x, seed=seed)
            rejected += report.reject
        assert rejected >= 45

    def test_nonlinear_heteroscedastic_conditioner_tolerated(self):
        # linear in x; free-form and noise-scaling effects of z are allowed
        accepted = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            z = rng.normal(size=500)
            x = rng.normal(size=500)
            y = np.sin(z) + x + (1.0 + z ** 2) * 0.3 * rng.normal(size=500)
            report = linearity_test(y, x, z, seed=seed)
            accepted += not report.reject
        assert accepted >= 40

    def test_permuted_regressor_calibration(self):
        rejections = 0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=400)
            y = 2.0 * x + rng.normal(size=400)
            report = linearity_test(y, rng.permutation(x), seed=seed)
            rejections += report.reject
        # Binomial(50, 0.05): 8 or more rejections has probability < 1e-3
        assert rejections <= 8

    def test_report_fields(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=300)
        y = x + rng.normal(size=300)
        report = linearity_test(
            y, x, alpha=0.1, target="ret", tested_parent="factor", conditioning=("z",)
        )
        assert report.target == "ret"
        assert report.tested_parent == "factor"
        assert report.conditioning == ("z",)
        assert 0.0 <= report.p_value <= 1.0
        assert report.reject == (report.p_value < 0.1)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            linearity_test(np.zeros(10), np.zeros(11))
