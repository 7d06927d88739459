"""Kernel primitives shared by the kernel-based independence tests.

Convention used throughout: the RBF kernel is k(x, y) = exp(-||x - y||^2 /
(2 sigma^2)) with sigma set by the median heuristic. Only consistency of the
convention matters for test calibration, so it is fixed here once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MEDIAN_HEURISTIC_MAX_POINTS = 500


def _as_matrix(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError("points must be a vector or an n x d matrix")
    return pts


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = (a * a).sum(axis=1)
    nb = (b * b).sum(axis=1)
    d2 = na[:, None] + nb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def median_heuristic_bandwidth(points) -> float:
    """Median pairwise Euclidean distance over the leading min(n, 500) rows.

    Falls back to the median of the positive distances when more than half
    of the pairs coincide; errors only when every point is identical.
    """
    pts = _as_matrix(points)
    n = pts.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points for the median heuristic")
    head = pts[: min(n, MEDIAN_HEURISTIC_MAX_POINTS)]
    d2 = _sq_dists(head, head)
    iu = np.triu_indices(head.shape[0], k=1)
    dists = np.sqrt(d2[iu])
    if not np.any(dists > 0):
        raise ValueError("all points identical, bandwidth undefined")
    med = float(np.median(dists))
    if med <= 0.0:
        med = float(np.median(dists[dists > 0]))
    return med


def rbf_gram(points, bandwidth: float) -> np.ndarray:
    """Gram matrix of exp(-||x - y||^2 / (2 sigma^2))."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    pts = _as_matrix(points)
    d2 = _sq_dists(pts, pts)
    gram = np.exp(-d2 / (2.0 * bandwidth * bandwidth))
    # exact symmetry and unit diagonal despite floating point noise
    gram = 0.5 * (gram + gram.T)
    np.fill_diagonal(gram, 1.0)
    return gram


def center_gram(gram: np.ndarray) -> np.ndarray:
    """H K H with H = I - (1/n) 11'. Row and column sums of the result are 0."""
    k = np.asarray(gram, dtype=float)
    row = k.mean(axis=0)
    total = row.mean()
    centered = k - row[None, :] - row[:, None] + total
    return 0.5 * (centered + centered.T)


def centered_rbf_gram(points, bandwidth: float = None) -> np.ndarray:
    """Convenience: median-heuristic bandwidth (unless given) then H K H."""
    if bandwidth is None:
        bandwidth = median_heuristic_bandwidth(points)
    return center_gram(rbf_gram(points, bandwidth))


@dataclass(frozen=True)
class FourierFeatureMap:
    """Random cosine features approximating the RBF kernel.

    frequencies are drawn from the spectral density N(0, sigma^-2 I) of the
    kernel, phases uniformly from [0, 2 pi); feature_i(x) =
    sqrt(2/m) cos(w_i . x + b_i), so z(x) . z(y) ~= k(x, y).
    """

    frequencies: np.ndarray  # m x d
    phases: np.ndarray  # m
    scale: float

    @property
    def n_features(self) -> int:
        return self.frequencies.shape[0]


def sample_fourier_features(d: int, m: int, bandwidth: float, seed) -> FourierFeatureMap:
    if m < 1:
        raise ValueError("need at least one Fourier feature")
    if d < 1:
        raise ValueError("input dimension must be >= 1")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    rng = np.random.default_rng(seed)
    freqs = rng.normal(0.0, 1.0 / bandwidth, size=(m, d))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=m)
    return FourierFeatureMap(freqs, phases, float(np.sqrt(2.0 / m)))


def apply_fourier_features(fmap: FourierFeatureMap, points) -> np.ndarray:
    pts = _as_matrix(points)
    if pts.shape[1] != fmap.frequencies.shape[1]:
        raise ValueError(
            f"feature map expects dimension {fmap.frequencies.shape[1]}, got {pts.shape[1]}"
        )
    return fmap.scale * np.cos(pts @ fmap.frequencies.T + fmap.phases[None, :])


def pivoted_cholesky(gram: np.ndarray, rtol: float = 1e-10, max_rank: int = None) -> np.ndarray:
    """Low-rank factor L (n x r) of a PSD matrix with L L' ~= gram.

    Greedy diagonal pivoting; stops once the residual trace drops below
    rtol * trace or the rank cap is hit. Cost O(n r^2).
    """
    k = np.asarray(gram, dtype=float)
    n = k.shape[0]
    if max_rank is None:
        max_rank = n
    diag = np.clip(np.diag(k).copy(), 0.0, None)
    trace = diag.sum()
    if trace <= 0:
        return np.zeros((n, 1))
    tol = rtol * trace
    cols = []
    threshold = max(tol, 0.0)
    for _ in range(min(max_rank, n)):
        j = int(np.argmax(diag))
        pivot = diag[j]
        if pivot <= max(threshold / n, 1e-300) or diag.sum() <= threshold:
            break
        col = k[:, j].copy()
        for prev in cols:
            col -= prev * prev[j]
        col /= np.sqrt(pivot)
        cols.append(col)
        diag -= col * col
        np.clip(diag, 0.0, None, out=diag)
    if not cols:
        cols.append(np.zeros(n))
    return np.column_stack(cols)
