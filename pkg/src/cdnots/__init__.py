"""Constraint-based causal discovery for nonstationary time series."""

from .assumptions import LinearityReport, linearity_test, stationarity_report
from .citest import (
    CITestResult,
    GramCache,
    cmiknn_test,
    kcit_test,
    parcorr_test,
    rcot_test,
    weighted_chisq_sf_hbe,
    weighted_chisq_sf_sw,
)
from .dataset import (
    LaggedDesignMatrix,
    TimeSeriesDataset,
    lag_embed,
    load_csv,
    save_csv,
    standardize,
    time_index_column,
)
from .discovery import (
    CI_TESTS,
    DiscoveryConfig,
    DiscoveryResult,
    SepsetRecord,
    TestLog,
    discover,
    orient_stage3,
    orient_stage4,
    skeleton_search,
)
from .graph import DIRECTED, TIME_NODE, UNDIRECTED, LaggedNode, MixedGraph, SummaryEdge
from .kernels import (
    FourierFeatureMap,
    apply_fourier_features,
    center_gram,
    median_heuristic_bandwidth,
    rbf_gram,
    sample_fourier_features,
)
from .simbench import EvalMetrics, SimInstance, SimSpec, evaluate, generate, run_benchmark

__version__ = "0.1.0"

__all__ = [
    "CITestResult",
    "CI_TESTS",
    "DIRECTED",
    "DiscoveryConfig",
    "DiscoveryResult",
    "EvalMetrics",
    "FourierFeatureMap",
    "GramCache",
    "LaggedDesignMatrix",
    "LaggedNode",
    "LinearityReport",
    "MixedGraph",
    "SepsetRecord",
    "SimInstance",
    "SimSpec",
    "SummaryEdge",
    "TestLog",
    "TIME_NODE",
    "TimeSeriesDataset",
    "UNDIRECTED",
    "apply_fourier_features",
    "center_gram",
    "cmiknn_test",
    "discover",
    "evaluate",
    "generate",
    "kcit_test",
    "lag_embed",
    "linearity_test",
    "load_csv",
    "median_heuristic_bandwidth",
    "orient_stage3",
    "orient_stage4",
    "parcorr_test",
    "rbf_gram",
    "rcot_test",
    "run_benchmark",
    "save_csv",
    "skeleton_search",
    "sample_fourier_features",
    "standardize",
    "stationarity_report",
    "time_index_column",
    "weighted_chisq_sf_hbe",
    "weighted_chisq_sf_sw",
]
