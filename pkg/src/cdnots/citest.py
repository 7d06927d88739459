"""Conditional independence tests.

Four tests share one result type:

- ``parcorr_test``: partial correlation with a two-sided t null, assumes
  linear relationships.
- ``kcit_test``: kernel-based test. The unconditional statistic is the
  normalized trace of the product of centered RBF Grams; the conditional
  statistic residualizes the Grams of (x, Z) and y on the Gram of Z by
  kernel ridge regression. The null is a weighted sum of squared normals
  approximated by Satterthwaite-Welch or Hall-Buckley-Eagleson moment
  matching.
- ``rcot_test``: the random-Fourier-feature approximation of the kernel
  test; cross-covariance of ridge-residualized cosine features, same null
  family. O(m^2 n) instead of O(n^3).
- ``cmiknn_test``: conditional mutual information estimated with a k-NN
  estimator on rank-transformed data; p-value from a local permutation
  scheme that shuffles x within neighborhoods of Z.

kcit, rcot and cmiknn order their first two arguments by a content digest
before computing, which makes test(x, y | Z) and test(y, x | Z) identical
by construction.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, stats
from scipy.spatial import cKDTree
from scipy.special import digamma

from .kernels import (
    apply_fourier_features,
    center_gram,
    median_heuristic_bandwidth,
    pivoted_cholesky,
    rbf_gram,
    sample_fourier_features,
)

P_FLOOR = 1e-300

KCIT_EPSILON = 1e-3
KCIT_EIG_RTOL = 1e-5
PIVCHOL_RTOL = 1e-10
PIVCHOL_MAX_RANK = 384


@dataclass(frozen=True)
class CITestResult:
    statistic: float
    p_value: float
    n: int
    cond_dim: int
    test_name: str
    degenerate: bool = False


def _finish_p(p: float) -> float:
    return float(min(1.0, max(P_FLOOR, p)))


def _as_vector(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float).ravel()
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    return a


def _as_cond(z) -> Optional[np.ndarray]:
    if z is None:
        return None
    a = np.asarray(z, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[1] == 0:
        return None
    return a


def _zscore(a: np.ndarray) -> np.ndarray:
    sd = a.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    return (a - a.mean(axis=0)) / safe


def _digest(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr)
    h = hashlib.blake2b(digest_size=16)
    h.update(str(a.shape).encode())
    h.update(a.tobytes())
    return h.digest()


def _canonical_xy(x: np.ndarray, y: np.ndarray):
    """Stable argument order so randomized and augmented tests are symmetric.

    Ordering keys off the sorted values first, which also makes the order
    (and hence the whole test) invariant to permuting the rows of all
    inputs together; the raw digest only breaks exact multiset ties."""
    sx, sy = _digest(np.sort(x)), _digest(np.sort(y))
    if sy < sx:
        return y, x
    if sx < sy:
        return x, y
    if _digest(y) < _digest(x):
        return y, x
    return x, y


# ---------------------------------------------------------------------------
# weighted chi-square survival approximations
# ---------------------------------------------------------------------------


def _sw_sf(s1: float, s2: float, t: float) -> float:
    """Survival of sum w_i chi2_1 at t, matching two cumulants with a scaled
    chi-square a * chi2_d (a = s2/s1, d = s1^2/s2)."""
    if s1 <= 0 or s2 <= 0:
        return 1.0
    a = s2 / s1
    d = s1 * s1 / s2
    return float(min(1.0, max(0.0, stats.chi2.sf(t / a, d))))


def _hbe_sf(s1: float, s2: float, s3: float, t: float) -> float:
    """Survival matching three cumulants: map t affinely onto a chi2_nu so
    that mean, variance and skewness agree, then read off its survival."""
    if s1 <= 0 or s2 <= 0:
        return 1.0
    if s3 <= 0:
        return _sw_sf(s1, s2, t)
    k2 = 2.0 * s2
    k3 = 8.0 * s3
    nu = 8.0 * k2 ** 3 / (k3 * k3)
    xt = np.sqrt(2.0 * nu / k2) * (t - s1) + nu
    return float(min(1.0, max(0.0, stats.chi2.sf(xt, nu))))


def _validate_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size == 0:
        raise ValueError("weight vector is empty")
    w = np.clip(w, 0.0, None)
    if not np.any(w > 0):
        raise ValueError("need at least one positive weight")
    return w


def weighted_chisq_sf_sw(weights, t: float) -> float:
    """P(sum_i w_i chi2_1 > t), Satterthwaite-Welch two-moment match."""
    w = _validate_weights(weights)
    if t < 0:
        return 1.0
    return _sw_sf(float(w.sum()), float((w * w).sum()), float(t))


def weighted_chisq_sf_hbe(weights, t: float) -> float:
    """P(sum_i w_i chi2_1 > t), Hall-Buckley-Eagleson three-moment match."""
    w = _validate_weights(weights)
    if t < 0:
        return 1.0
    return _hbe_sf(float(w.sum()), float((w * w).sum()), float((w ** 3).sum()), float(t))


# ---------------------------------------------------------------------------
# partial correlation
# ---------------------------------------------------------------------------


def parcorr_test(x, y, z=None) -> CITestResult:
    """Residualize x and y on [1, Z] by least squares and t-test the Pearson
    correlation of the residuals. Rank-deficient Z is fine (pseudo-inverse);
    a vanishing residual leaves p = 1 with the degenerate flag set."""
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    zm = _as_cond(z)
    n = xv.size
    if yv.size != n or (zm is not None and zm.shape[0] != n):
        raise ValueError("x, y and Z must share their length")
    q = 0 if zm is None else zm.shape[1]
    if n <= q + 3:
        raise ValueError(f"need n > cond_dim + 3, got n={n}, cond_dim={q}")
    design = np.ones((n, 1)) if zm is None else np.column_stack([np.ones(n), zm])
    coef, *_ = np.linalg.lstsq(design, np.column_stack([xv, yv]), rcond=None)
    resid = np.column_stack([xv, yv]) - design @ coef
    rx, ry = resid[:, 0], resid[:, 1]
    vx = float(rx @ rx)
    vy = float(ry @ ry)
    tiny_x = 1e-12 * n * max(float(np.var(xv)), 0.0) + 1e-280
    tiny_y = 1e-12 * n * max(float(np.var(yv)), 0.0) + 1e-280
    if vx <= tiny_x or vy <= tiny_y:
        return CITestResult(0.0, 1.0, n, q, "parcorr", degenerate=True)
    r = float(np.clip((rx @ ry) / np.sqrt(vx * vy), -1.0, 1.0))
    df = n - q - 2
    denom = max(1.0 - r * r, 1e-300)
    t_stat = r * np.sqrt(df / denom)
    p = 2.0 * stats.t.sf(abs(t_stat), df)
    return CITestResult(float(r), _finish_p(p), n, q, "parcorr")


# ---------------------------------------------------------------------------
# gram cache
# ---------------------------------------------------------------------------


class GramCache:
    """Per-dataset cache of centered Grams, their spectra, and low-rank
    factors, keyed by a digest of the input block. Bounded by LRU eviction
    so that large searches stay within memory."""

    def __init__(self, max_grams: int = 48, max_factors: int = 192):
        self._grams: OrderedDict = OrderedDict()
        self._factors: OrderedDict = OrderedDict()
        self._evals: dict = {}
        self.max_grams = max_grams
        self.max_factors = max_factors

    @staticmethod
    def _get(store: OrderedDict, key, builder, cap: int):
        if key in store:
            store.move_to_end(key)
            return store[key]
        value = builder()
        store[key] = value
        if len(store) > cap:
            store.popitem(last=False)
        return value

    def centered_gram(self, block: np.ndarray) -> np.ndarray:
        key = _digest(block)
        return self._get(
            self._grams,
            key,
            lambda: center_gram(rbf_gram(block, median_heuristic_bandwidth(block))),
            self.max_grams,
        )

    def evals(self, block: np.ndarray) -> np.ndarray:
        key = _digest(block)
        if key not in self._evals:
            w = np.linalg.eigvalsh(self.centered_gram(block))
            self._evals[key] = np.clip(w[::-1], 0.0, None)
        return self._evals[key]

    def factor(self, block: np.ndarray) -> np.ndarray:
        key = _digest(block)
        return self._get(
            self._factors,
            key,
            lambda: pivoted_cholesky(
                self.centered_gram(block), rtol=PIVCHOL_RTOL, max_rank=PIVCHOL_MAX_RANK
            ),
            self.max_factors,
        )


def _constant_block(a: np.ndarray) -> bool:
    return bool(np.all(a.std(axis=0) <= 0))


def _ridge_residual_factor(lf: np.ndarray, lz: np.ndarray, epsilon: float) -> np.ndarray:
    """Rz @ L for Rz = eps (Kz + eps I)^-1 with Kz = Lz Lz', via Woodbury."""
    r = lz.shape[1]
    gram_small = lz.T @ lz + epsilon * np.eye(r)
    try:
        cho = linalg.cho_factor(gram_small)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"ridge system factorization failed: {exc}") from None
    return lf - lz @ linalg.cho_solve(cho, lz.T @ lf)


def residualized_grams(x, y, z=None, *, epsilon: float = KCIT_EPSILON, cache: GramCache = None):
    """Centered Grams used by the kernel test, after conditioning.

    Unconditional: the centered RBF Grams of x and y. Conditional: the Grams
    of (x, Z) and y, both kernel-ridge-residualized on the Gram of Z. The
    trace of their product is the test statistic (normalized by n in the
    unconditional case). Exposed as a building block for diagnostics and
    reference implementations.
    """
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    zm = _as_cond(z)
    cache = cache or GramCache()
    xv, yv = _canonical_xy(xv, yv)
    xs, ys = _zscore(xv[:, None]), _zscore(yv[:, None])
    if zm is None:
        return cache.centered_gram(xs), cache.centered_gram(ys)
    zs = _zscore(zm)
    xz = np.column_stack([xs, zs])
    lx = cache.factor(xz)
    ly = cache.factor(ys)
    lz = cache.factor(zs)
    a = _ridge_residual_factor(lx, lz, epsilon)
    b = _ridge_residual_factor(ly, lz, epsilon)
    return a @ a.T, b @ b.T


def kcit_test(
    x,
    y,
    z=None,
    approx: str = "hbe",
    *,
    epsilon: float = KCIT_EPSILON,
    eig_rtol: float = KCIT_EIG_RTOL,
    cache: GramCache = None,
) -> CITestResult:
    """Kernel-based conditional independence test.

    Unconditional: statistic (1/n) tr(Kx~ Ky~) with centered RBF Grams and
    null weights from the outer product of their spectra (eigenvalues below
    eig_rtol times the largest are dropped). Conditional: the Grams of
    (x, Z) and y are residualized on the Gram of Z with ridge regularization
    ``epsilon``; the statistic is the trace of the product of the residual
    Grams and the null cumulants are those of the eigenvalues of their
    elementwise product, which feeds the same moment-matching survival
    functions without forming the spectrum explicitly.
    """
    if approx not in ("sw", "hbe"):
        raise ValueError(f"approx must be 'sw' or 'hbe', got {approx!r}")
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    zm = _as_cond(z)
    n = xv.size
    if yv.size != n or (zm is not None and zm.shape[0] != n):
        raise ValueError("x, y and Z must share their length")
    if n < 10:
        raise ValueError(f"kcit needs n >= 10, got {n}")
    q = 0 if zm is None else zm.shape[1]
    name = f"kcit-{approx}"
    xv, yv = _canonical_xy(xv, yv)
    xs, ys = _zscore(xv[:, None]), _zscore(yv[:, None])
    if _constant_block(xs) or _constant_block(ys):
        return CITestResult(0.0, 1.0, n, q, name, degenerate=True)
    cache = cache or GramCache()

    if zm is None:
        kx = cache.centered_gram(xs)
        ky = cache.centered_gram(ys)
        statistic = float((kx * ky).sum()) / n
        wx = cache.evals(xs)
        wy = cache.evals(ys)
        wx = wx[wx >= eig_rtol * wx[0]] / n
        wy = wy[wy >= eig_rtol * wy[0]] / n
        weights = np.outer(wx, wy).ravel()
        sf = weighted_chisq_sf_sw if approx == "sw" else weighted_chisq_sf_hbe
        return CITestResult(statistic, _finish_p(sf(weights, statistic)), n, q, name)

    zs = _zscore(zm)
    xz = np.column_stack([xs, zs])
    lx = cache.factor(xz)
    ly = cache.factor(ys)
    lz = cache.factor(zs)
    a = _ridge_residual_factor(lx, lz, epsilon)
    b = _ridge_residual_factor(ly, lz, epsilon)
    # statistic tr(KxR KyR) for KxR = a a', KyR = b b'
    cross = b.T @ a
    statistic = float((cross * cross).sum())
    # null weights: spectrum of the Kronecker product of the residual Grams,
    # scaled to match the exchangeable (permutation) null exactly in mean
    wx = np.clip(np.linalg.eigvalsh(a.T @ a), 0.0, None)
    wy = np.clip(np.linalg.eigvalsh(b.T @ b), 0.0, None)
    if wx.max(initial=0.0) <= 0 or wy.max(initial=0.0) <= 0:
        return CITestResult(statistic, 1.0, n, q, name, degenerate=True)
    wx = wx[wx >= eig_rtol * wx.max()]
    wy = wy[wy >= eig_rtol * wy.max()]
    sx1, sx2, sx3 = wx.sum(), (wx * wx).sum(), (wx ** 3).sum()
    sy1, sy2, sy3 = wy.sum(), (wy * wy).sum(), (wy ** 3).sum()
    scale = 1.0 / (n - 1.0)
    s1 = float(sx1 * sy1) * scale
    s2 = float(sx2 * sy2) * scale ** 2
    s3 = float(sx3 * sy3) * scale ** 3
    if s1 <= 0 or s2 <= 0:
        return CITestResult(statistic, 1.0, n, q, name, degenerate=True)
    if approx == "sw":
        p = _sw_sf(s1, s2, statistic)
    else:
        p = _hbe_sf(s1, s2, s3, statistic)
    return CITestResult(statistic, _finish_p(p), n, q, name)


# ---------------------------------------------------------------------------
# randomized Fourier test
# ---------------------------------------------------------------------------


def rcot_test(
    x,
    y,
    z=None,
    approx: str = "hbe",
    seed=0,
    *,
    n_features: int = 5,
    n_features_z: int = 25,
    reg: float = 1e-8,
) -> CITestResult:
    """Randomized conditional correlation test.

    Cosine features (5 each for x and y, 25 for the conditioning block by
    default) are ridge-residualized on the Z features; the statistic is
    n times the squared Frobenius norm of the residual cross-covariance and
    the null weights are the eigenvalues of the covariance of its per-sample
    terms. Deterministic for a fixed seed.
    """
    if approx not in ("sw", "hbe"):
        raise ValueError(f"approx must be 'sw' or 'hbe', got {approx!r}")
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    zm = _as_cond(z)
    n = xv.size
    if yv.size != n or (zm is not None and zm.shape[0] != n):
        raise ValueError("x, y and Z must share their length")
    if n < 10:
        raise ValueError(f"rcot needs n >= 10, got {n}")
    q = 0 if zm is None else zm.shape[1]
    name = f"rcot-{approx}"
    xv, yv = _canonical_xy(xv, yv)
    xs, ys = _zscore(xv[:, None]), _zscore(yv[:, None])
    if _constant_block(xs) or _constant_block(ys):
        return CITestResult(0.0, 1.0, n, q, name, degenerate=True)

    seed_x, seed_y, seed_z = np.random.SeedSequence(seed).spawn(3)
    fx = apply_fourier_features(
        sample_fourier_features(1, n_features, median_heuristic_bandwidth(xs), seed_x), xs
    )
    fy = apply_fourier_features(
        sample_fourier_features(1, n_features, median_heuristic_bandwidth(ys), seed_y), ys
    )
    fx = fx - fx.mean(axis=0)
    fy = fy - fy.mean(axis=0)

    if zm is not None:
        zs = _zscore(zm)
        fz = apply_fourier_features(
            sample_fourier_features(
                zs.shape[1], n_features_z, median_heuristic_bandwidth(zs), seed_z
            ),
            zs,
        )
        fz = fz - fz.mean(axis=0)
        czz = fz.T @ fz / n + reg * np.eye(fz.shape[1])
        beta = np.linalg.solve(czz, fz.T @ np.column_stack([fx, fy]) / n)
        resid = np.column_stack([fx, fy]) - fz @ beta
        ex, ey = resid[:, : fx.shape[1]], resid[:, fx.shape[1] :]
    else:
        ex, ey = fx, fy

    cxy = ex.T @ ey / n
    statistic = float(n * (cxy * cxy).sum())
    d = np.einsum("ni,nj->nij", ex, ey).reshape(n, -1)
    d = d - d.mean(axis=0)
    sigma = d.T @ d / n
    weights = np.clip(np.linalg.eigvalsh(sigma)[::-1], 0.0, None)
    if not np.any(weights > 0):
        return CITestResult(statistic, 1.0, n, q, name, degenerate=True)
    sf = weighted_chisq_sf_sw if approx == "sw" else weighted_chisq_sf_hbe
    return CITestResult(statistic, _finish_p(sf(weights, statistic)), n, q, name)


# ---------------------------------------------------------------------------
# k-NN conditional mutual information
# ---------------------------------------------------------------------------


def _rank_transform(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    n = a.shape[0]
    for j in range(a.shape[1]):
        order = np.argsort(a[:, j], kind="stable")
        ranks = np.empty(n)
        ranks[order] = np.arange(n)
        out[:, j] = ranks / (n - 1)
    return out


def _interval_counts(sorted_vals: np.ndarray, centers: np.ndarray, radius: np.ndarray) -> np.ndarray:
    lo = np.searchsorted(sorted_vals, centers - radius, side="left")
    hi = np.searchsorted(sorted_vals, centers + radius, side="right")
    return hi - lo - 1  # drop the point itself


def _local_permutation(rng, nbrs: np.ndarray) -> np.ndarray:
    """Runge-style restricted shuffle: each position receives the x value of
    one of its k_perm nearest neighbors in Z space, drawing unused donors
    first."""
    n, kp = nbrs.shape
    perm = np.empty(n, dtype=int)
    used = np.zeros(n, dtype=bool)
    for i in rng.permutation(n):
        cand = nbrs[i][rng.permutation(kp)]
        pick = cand[-1]
        for c in cand:
            if not used[c]:
                pick = c
                break
        perm[i] = pick
        used[pick] = True
    return perm


def cmiknn_test(
    x,
    y,
    z=None,
    *,
    k: int = None,
    n_perm: int = 200,
    k_perm: int = 5,
    seed=0,
) -> CITestResult:
    """Conditional mutual information test with a k-NN estimator and a
    permutation null.

    Data is rank-transformed per column; neighborhoods use the Chebyshev
    metric. The estimate follows the classic nearest-neighbor construction:
    psi(k) + E[psi(n_z + 1) - psi(n_xz + 1) - psi(n_yz + 1)] (with the
    marginal variant when Z is empty). The permutation scheme shuffles x
    within the k_perm nearest Z-neighborhoods, or fully when Z is empty;
    p = (1 + #{permuted >= observed}) / (n_perm + 1).
    """
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    zm = _as_cond(z)
    n = xv.size
    if yv.size != n or (zm is not None and zm.shape[0] != n):
        raise ValueError("x, y and Z must share their length")
    if k is None:
        k = max(5, int(round(0.1 * n)))
    if k >= n:
        raise ValueError(f"k={k} must be smaller than n={n}")
    if n <= 2 * k + 2:
        raise ValueError(f"need n > 2k + 2 (n={n}, k={k})")
    q = 0 if zm is None else zm.shape[1]
    xv, yv = _canonical_xy(xv, yv)
    xs = _rank_transform(xv[:, None])[:, 0]
    ys = _rank_transform(yv[:, None])[:, 0]
    zs = _rank_transform(zm) if zm is not None else None
    rng = np.random.default_rng(seed)

    y_sorted = np.sort(ys)
    x_sorted = np.sort(xs)

    if zs is None:
        psi_base = digamma(k) + digamma(n)

        def estimate(x_cur: np.ndarray) -> float:
            joint = np.column_stack([x_cur, ys])
            tree = cKDTree(joint)
            dist = tree.query(joint, k=k + 1, p=np.inf)[0][:, -1]
            radius = np.nextafter(dist, 0)
            nx = _interval_counts(x_sorted, x_cur, radius)
            ny = _interval_counts(y_sorted, ys, radius)
            return float(psi_base - np.mean(digamma(nx + 1) + digamma(ny + 1)))

        observed = estimate(xs)
        count = 0
        for _ in range(n_perm):
            if estimate(xs[rng.permutation(n)]) >= observed:
                count += 1
    else:
        z_tree = cKDTree(zs)
        yz = np.column_stack([ys, zs])
        yz_tree = cKDTree(yz)
        nbrs = z_tree.query(zs, k=min(k_perm, n), p=np.inf)[1]
        if nbrs.ndim == 1:
            nbrs = nbrs[:, None]

        def estimate(x_cur: np.ndarray) -> float:
            joint = np.column_stack([x_cur, ys, zs])
            tree = cKDTree(joint)
            dist = tree.query(joint, k=k + 1, p=np.inf)[0][:, -1]
            radius = np.nextafter(dist, 0)
            xz_tree = cKDTree(np.column_stack([x_cur, zs]))
            nxz = xz_tree.query_ball_point(
                np.column_stack([x_cur, zs]), radius, p=np.inf, return_length=True
            ) - 1
            nyz = yz_tree.query_ball_point(yz, radius, p=np.inf, return_length=True) - 1
            nz = z_tree.query_ball_point(zs, radius, p=np.inf, return_length=True) - 1
            return float(
                digamma(k) + np.mean(digamma(nz + 1) - digamma(nxz + 1) - digamma(nyz + 1))
            )

        observed = estimate(xs)
        count = 0
        for _ in range(n_perm):
            perm = _local_permutation(rng, nbrs)
            if estimate(xs[perm]) >= observed:
                count += 1

    p = (1.0 + count) / (n_perm + 1.0)
    return CITestResult(float(observed), _finish_p(p), n, q, "cmiknn")
