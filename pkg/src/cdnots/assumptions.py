"""Diagnostics for the statistically testable modeling assumptions:
stationarity (read off the discovered graph) and linearity with additive
noise (regression residual independence)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .citest import CITestResult, cmiknn_test, kcit_test, parcorr_test, rcot_test
from .graph import TIME_NODE, LaggedNode, MixedGraph
from .kernels import median_heuristic_bandwidth, rbf_gram


def stationarity_report(g: MixedGraph) -> list:
    """(variable name, is_nonstationary) per variable; a variable counts as
    nonstationary exactly when it keeps an edge to the time node."""
    return [
        (g.names[i], g.has_edge(TIME_NODE, LaggedNode(i, 0)))
        for i in range(g.n_vars)
    ]


@dataclass(frozen=True)
class LinearityReport:
    target: str
    tested_parent: str
    conditioning: tuple
    p_value: float
    alpha: float
    reject: bool


def _zscore_vec(a: np.ndarray) -> np.ndarray:
    sd = a.std()
    return (a - a.mean()) / (sd if sd > 0 else 1.0)


def _run_ci(name: str, x, y, z, seed) -> CITestResult:
    if name == "parcorr":
        return parcorr_test(x, y, z)
    if name.startswith("kcit"):
        return kcit_test(x, y, z, approx=name.split("-")[1])
    if name.startswith("rcot"):
        return rcot_test(x, y, z, approx=name.split("-")[1], seed=seed)
    if name == "cmiknn":
        return cmiknn_test(x, y, z, seed=seed)
    raise ValueError(f"unknown ci_test {name!r}")


def linearity_test(
    y,
    x,
    z=None,
    *,
    alpha: float = 0.05,
    ci_test: str = "kcit-hbe",
    jitter: float = 1e-4,
    seed: int = 0,
    target: str = "y",
    tested_parent: str = "x",
    conditioning: Sequence[str] = (),
) -> LinearityReport:
    """Test whether y depends on x linearly with additive noise, given Z.

    Fits a kernel ridge regression of y on (x, Z) with the additive kernel
    k_lin(x, x') + k_rbf(Z, Z'), so the fit is linear in x but free-form in
    Z, then runs the configured CI test on residual vs x given Z. Rejection
    means the linear-in-x additive-noise hypothesis fails; a nonlinear link
    to Z or Z-dependent noise scale alone does not trigger rejection.
    """
    yv = np.asarray(y, dtype=float).ravel()
    xv = np.asarray(x, dtype=float).ravel()
    if yv.size != xv.size:
        raise ValueError("x and y must share their length")
    zm = None
    if z is not None:
        zm = np.asarray(z, dtype=float)
        if zm.ndim == 1:
            zm = zm[:, None]
        if zm.shape[1] == 0:
            zm = None
        elif zm.shape[0] != yv.size:
            raise ValueError("Z must share the length of x and y")
    ys = _zscore_vec(yv)
    xs = _zscore_vec(xv)
    kernel = np.outer(xs, xs)
    if zm is not None:
        zs = (zm - zm.mean(axis=0)) / np.where(zm.std(axis=0) > 0, zm.std(axis=0), 1.0)
        kernel = kernel + rbf_gram(zs, median_heuristic_bandwidth(zs))
    try:
        cho = linalg.cho_factor(kernel + jitter * np.eye(yv.size))
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular kernel system in linearity test: {exc}") from None
    fitted = kernel @ linalg.cho_solve(cho, ys)
    resid = ys - fitted
    result = _run_ci(ci_test, resid, xs, zm, seed)
    return LinearityReport(
        target=target,
        tested_parent=tested_parent,
        conditioning=tuple(conditioning),
        p_value=result.p_value,
        alpha=alpha,
        reject=result.p_value < alpha,
    )
