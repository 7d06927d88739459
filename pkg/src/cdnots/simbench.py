"""Synthetic ground-truth generation, graph metrics, and the benchmark
runner: random lagged structural equation models, precision / recall /
F-score / structural Hamming distance against the truth, and a resumable
grid sweep over tests and significance levels."""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import TimeSeriesDataset
from .discovery import DiscoveryConfig, discover
from .graph import DIRECTED, EdgeInfo, LaggedNode, MixedGraph, canonical_pair

MECHANISMS = ("linear", "quadratic", "exponential", "sine")

_EXPLOSION_LIMIT = 1e9


def _apply_mechanism(kind: str, value: np.ndarray, coef: float) -> np.ndarray:
    if kind == "linear":
        return coef * value
    if kind == "quadratic":
        return coef * value * value
    if kind == "exponential":
        return coef * np.exp(np.clip(value, -3.0, 3.0))
    if kind == "sine":
        return coef * np.sin(value)
    raise ValueError(f"unknown mechanism {kind!r}")


@dataclass(frozen=True)
class SimSpec:
    n_nodes: int
    n_samples: int
    max_lag: int = 1
    edge_density: float = 0.2
    mechanisms: tuple = MECHANISMS
    noise_scale: float = 1.0
    coef_low: float = 0.3
    coef_high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.edge_density <= 1.0:
            raise ValueError("edge_density must be in (0, 1]")
        if self.coef_low < 0.3:
            raise ValueError("coefficient magnitudes below 0.3 are too close to unfaithful")
        if self.coef_high < self.coef_low:
            raise ValueError("coef_high must be >= coef_low")
        if self.n_nodes < 1 or self.n_samples < 4 or self.max_lag < 0:
            raise ValueError("invalid simulation size")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        unknown = set(self.mechanisms) - set(MECHANISMS)
        if unknown:
            raise ValueError(f"unknown mechanisms: {sorted(unknown)}")
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))


@dataclass(frozen=True)
class SimInstance:
    truth: MixedGraph
    data: TimeSeriesDataset
    spec: SimSpec
    edges: tuple  # ((cause_var, lag, effect_var, mechanism, coef), ...)


@dataclass(frozen=True)
class EvalMetrics:
    precision: float
    recall: float
    f_score: float
    shd: int


def _spectral_radius(contemp: np.ndarray, lagged: list) -> float:
    """Largest companion-matrix eigenvalue modulus of the linear part."""
    n = contemp.shape[0]
    max_lag = len(lagged)
    if max_lag == 0:
        return 0.0
    try:
        inv = np.linalg.inv(np.eye(n) - contemp)
    except np.linalg.LinAlgError:
        return np.inf
    reduced = [inv @ a for a in lagged]
    comp = np.zeros((n * max_lag, n * max_lag))
    for l, a in enumerate(reduced):
        comp[:n, l * n : (l + 1) * n] = a
    if max_lag > 1:
        comp[n:, : n * (max_lag - 1)] = np.eye(n * (max_lag - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def generate(spec: SimSpec) -> SimInstance:
    """Sample a random lagged structural equation model and simulate it.

    The contemporaneous part is rejection-sampled until acyclic; each edge
    gets a mechanism and a coefficient with magnitude in
    [coef_low, coef_high] and random sign. The linear lag polynomial is
    rescaled when its spectral radius reaches 0.95, and instances whose
    nonlinear feedback still explodes are redrawn. Deterministic per seed;
    gives up after 1000 attempts.
    """
    rng = np.random.default_rng(spec.seed)
    n, max_lag = spec.n_nodes, spec.max_lag
    burn = 10 * (max_lag + 1)
    total = burn + spec.n_samples + max_lag

    for _ in range(1000):
        contemp_pairs = []
        ok = True
        adj = {i: [] for i in range(n)}
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < spec.edge_density:
                    pair = (i, j) if rng.random() < 0.5 else (j, i)
                    contemp_pairs.append(pair)
                    adj[pair[0]].append(pair[1])
        # acyclicity of the contemporaneous part
        state = {i: 0 for i in range(n)}

        def visit(i) -> bool:
            state[i] = 1
            for j in adj[i]:
                if state[j] == 1 or (state[j] == 0 and not visit(j)):
                    return False
            state[i] = 2
            return True

        ok = all(state[i] != 0 or visit(i) for i in range(n))
        if not ok:
            continue

        edges = []
        for i, j in contemp_pairs:
            edges.append((i, 0, j))
        for lag in range(1, max_lag + 1):
            for i in range(n):
                for j in range(n):
                    if rng.random() < spec.edge_density:
                        edges.append((i, lag, j))
        mech = [spec.mechanisms[rng.integers(len(spec.mechanisms))] for _ in edges]
        coef = [
            float(rng.uniform(spec.coef_low, spec.coef_high) * rng.choice([-1.0, 1.0]))
            for _ in edges
        ]

        contemp_lin = np.zeros((n, n))
        lagged_lin = [np.zeros((n, n)) for _ in range(max_lag)]
        for (i, lag, j), m, c in zip(edges, mech, coef):
            if m != "linear":
                continue
            if lag == 0:
                contemp_lin[j, i] = c
            else:
                lagged_lin[lag - 1][j, i] = c
        rho = _spectral_radius(contemp_lin, lagged_lin)
        if np.isfinite(rho) and rho >= 0.95:
            shrink = 0.9 / rho
            coef = [
                c * shrink if (m == "linear" and lag > 0) else c
                for (i, lag, j), m, c in zip(edges, mech, coef)
            ]

        # simulate forward in contemporaneous topological order
        order = []
        indeg = {i: 0 for i in range(n)}
        children = {i: [] for i in range(n)}
        for i, lag, j in edges:
            if lag == 0:
                indeg[j] += 1
                children[i].append(j)
        frontier = sorted(i for i in range(n) if indeg[i] == 0)
        while frontier:
            cur = frontier.pop(0)
            order.append(cur)
            for ch in children[cur]:
                indeg[ch] -= 1
                if indeg[ch] == 0:
                    frontier.append(ch)
            frontier.sort()

        parents_of = {j: [] for j in range(n)}
        for (i, lag, j), m, c in zip(edges, mech, coef):
            parents_of[j].append((i, lag, m, c))
        # exogenous nodes are their own driving source and keep unit noise;
        # noise_scale parameterizes the mechanism equations
        sd = np.array([spec.noise_scale if parents_of[j] else 1.0 for j in range(n)])
        noise = rng.normal(0.0, 1.0, size=(total, n)) * sd
        values = np.zeros((total, n))
        exploded = False
        for t in range(total):
            for j in order:
                acc = noise[t, j]
                for i, lag, m, c in parents_of[j]:
                    if lag > t:
                        continue
                    acc += float(_apply_mechanism(m, values[t - lag, i], c))
                values[t, j] = acc
            if not np.all(np.isfinite(values[t])) or np.max(np.abs(values[t])) > _EXPLOSION_LIMIT:
                exploded = True
                break
        if exploded:
            continue

        data = TimeSeriesDataset(
            values[burn + max_lag :],
            tuple(f"v{i}" for i in range(n)),
            max_lag=max_lag,
        )
        truth = MixedGraph(n, max_lag, data.names)
        for (i, lag, j), m, c in zip(edges, mech, coef):
            src, dst = LaggedNode(i, lag), LaggedNode(j, 0)
            key, shift = canonical_pair(src, dst)
            truth._edges[key] = EdgeInfo(DIRECTED, dst.shifted(-shift), 0.0)
        record = tuple(
            (i, lag, j, m, c) for (i, lag, j), m, c in zip(edges, mech, coef)
        )
        return SimInstance(truth=truth, data=data, spec=spec, edges=record)

    raise RuntimeError(f"could not draw a stable acyclic model in 1000 attempts (seed {spec.seed})")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _summary_marks(g: MixedGraph) -> dict:
    """Variable summary edges keyed by adjacency identity; the value encodes
    orientation (head variable, or None when undirected). Contemporaneous
    edges key on the unordered variable pair; lagged edges key on (lagged
    variable, anchor variable, offset) since the lag breaks the symmetry.
    Time edges are excluded: the time node is an algorithm device, not part
    of the simulated structure."""
    out = {}
    for edge in g.summary_edges():
        if edge.src.is_time or edge.dst.is_time:
            continue
        a, b = edge.src, edge.dst
        if edge.lag > 0:
            lagged, anchor = (a, b) if a.lag > b.lag else (b, a)
            key = (lagged.var, anchor.var, edge.lag)
        else:
            key = (min(a.var, b.var), max(a.var, b.var), 0)
        out[key] = edge.dst.var if edge.mark == DIRECTED else None
    return out


def evaluate(truth: MixedGraph, estimate: MixedGraph) -> EvalMetrics:
    """Adjacency-credit precision and recall plus orientation-aware SHD over
    summary edges. An estimated edge counts for precision and recall when
    its (pair, lag offset) adjacency exists in the truth; SHD additionally
    charges one operation per wrong or missing orientation."""
    if truth.n_vars != estimate.n_vars or truth.max_lag != estimate.max_lag:
        raise ValueError("graphs must share n_vars and max_lag")
    t_marks = _summary_marks(truth)
    e_marks = _summary_marks(estimate)
    tp = len(set(t_marks) & set(e_marks))
    n_est = len(e_marks)
    n_true = len(t_marks)
    precision = tp / n_est if n_est else (1.0 if n_true == 0 else 0.0)
    recall = tp / n_true if n_true else 1.0
    f_score = (
        2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    )
    shd = 0
    for key in set(t_marks) | set(e_marks):
        if key not in t_marks or key not in e_marks:
            shd += 1
        elif t_marks[key] != e_marks[key]:
            shd += 1
    return EvalMetrics(precision, recall, f_score, shd)


# ---------------------------------------------------------------------------
# benchmark runner
# ---------------------------------------------------------------------------

RESULT_COLUMNS = (
    "n_nodes",
    "n_samples",
    "max_lag",
    "edge_density",
    "noise_scale",
    "seed",
    "test_name",
    "alpha",
    "precision",
    "recall",
    "f_score",
    "shd",
    "wall_ms",
    "n_tests",
    "status",
)


def _row_key(row: dict) -> tuple:
    return (
        str(row["n_nodes"]),
        str(row["n_samples"]),
        str(row["seed"]),
        str(row["test_name"]),
        str(row["alpha"]),
    )


def _worker_count(threads: Optional[int]) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("CDNOTS_THREADS")
    return max(1, int(env)) if env else 1


def run_benchmark(
    specs: Sequence[SimSpec],
    tests: Sequence[str],
    alphas: Sequence[float],
    out_path,
    *,
    max_cond_size: Optional[int] = None,
    stage4: bool = False,
    threads: Optional[int] = None,
) -> list:
    """One result row per (instance, test, alpha), appended to a CSV.

    Re-running against an existing file skips rows whose key is already
    present, so interrupted sweeps resume without duplicates. Failures of a
    single instance are recorded in the row's status, not raised.
    """
    if not specs:
        raise ValueError("benchmark grid is empty")
    done = set()
    file_exists = os.path.exists(out_path) and os.path.getsize(out_path) > 0
    if file_exists:
        with open(out_path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                done.add(_row_key(row))

    instances: dict = {}

    def instance_for(spec: SimSpec) -> SimInstance:
        if spec not in instances:
            instances[spec] = generate(spec)
        return instances[spec]

    tasks = [
        (spec, test, alpha) for spec in specs for test in tests for alpha in alphas
    ]
    pending = []
    for spec, test, alpha in tasks:
        key = (
            str(spec.n_nodes),
            str(spec.n_samples),
            str(spec.seed),
            str(test),
            str(float(alpha)),
        )
        if key not in done:
            pending.append((spec, test, alpha))

    def run_one(task) -> dict:
        spec, test, alpha = task
        row = {
            "n_nodes": spec.n_nodes,
            "n_samples": spec.n_samples,
            "max_lag": spec.max_lag,
            "edge_density": spec.edge_density,
            "noise_scale": spec.noise_scale,
            "seed": spec.seed,
            "test_name": test,
            "alpha": float(alpha),
            "precision": "",
            "recall": "",
            "f_score": "",
            "shd": "",
            "wall_ms": "",
            "n_tests": "",
            "status": "ok",
        }
        try:
            inst = instance_for(spec)
            cfg = DiscoveryConfig(
                max_lag=spec.max_lag,
                alpha=float(alpha),
                ci_test=test,
                max_cond_size=max_cond_size,
                seed=spec.seed,
                stage4_enabled=stage4,
            )
            start = time.perf_counter()
            result = discover(inst.data, cfg)
            wall_ms = (time.perf_counter() - start) * 1000.0
            metrics = evaluate(inst.truth, result.graph)
            row.update(
                precision=metrics.precision,
                recall=metrics.recall,
                f_score=metrics.f_score,
                shd=metrics.shd,
                wall_ms=round(wall_ms, 3),
                n_tests=result.log.n_tests,
            )
        except Exception as exc:  # recorded, not fatal
            row["status"] = f"error:{exc}"
        return row

    workers = _worker_count(threads)
    if workers > 1 and len(pending) > 1:
        # instances are materialized up front so the cache dict stays read-only
        for spec, _, _ in pending:
            try:
                instance_for(spec)
            except Exception:
                pass
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_one, pending))
    else:
        rows = [run_one(task) for task in pending]

    with open(out_path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if not file_exists:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return rows
