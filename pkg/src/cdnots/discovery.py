"""Four-stage causal discovery over lagged time series.

Stage 1 starts from the complete graph over all (variable, lag) vertices
plus the time node. Stage 2 prunes it with conditional independence tests:
first the time edges, whose conditioning sets are drawn from all variable
vertices (the variable skeleton is still complete at that point), then the
variable pairs with PC-stable level-wise search where conditioning sets come
from current neighborhoods and may include the time node. Stage 3 orients:
time edges away from the time node, cross-lag edges along the arrow of time,
colliders from separating sets, then the four Meek propagation rules.
Stage 4 optionally orients remaining edges between two time-adjacent
variables by comparing how independently the candidate cause's marginal and
the candidate effect's conditional mechanism drift across time blocks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .citest import (
    CITestResult,
    GramCache,
    cmiknn_test,
    kcit_test,
    parcorr_test,
    rcot_test,
)
from .dataset import LaggedDesignMatrix, TimeSeriesDataset, lag_embed, standardize
from .graph import (
    DIRECTED,
    TIME_NODE,
    UNDIRECTED,
    LaggedNode,
    MixedGraph,
    canonical_pair,
)

CI_TESTS = ("parcorr", "kcit-sw", "kcit-hbe", "rcot-sw", "rcot-hbe", "cmiknn")

STAGE_TIME = "stage2_time"
STAGE_VAR = "stage2_var"


@dataclass
class DiscoveryConfig:
    max_lag: int = 1
    alpha: float = 0.05
    ci_test: str = "kcit-hbe"
    max_cond_size: Optional[int] = None  # None: unbounded up to 6 variables, else 3
    seed: int = 0
    stage4_enabled: bool = True
    stage4_window: int = 10
    stage4_margin: float = 0.25
    stage4_min_rows: int = 30

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.max_lag < 0:
            raise ValueError("max_lag must be >= 0")
        if self.ci_test not in CI_TESTS:
            raise ValueError(f"unknown ci_test {self.ci_test!r}, expected one of {CI_TESTS}")
        if self.max_cond_size is not None and self.max_cond_size < 0:
            raise ValueError("max_cond_size must be >= 0")

    def resolved_cap(self, n_vars: int) -> Optional[int]:
        if self.max_cond_size is not None:
            return self.max_cond_size
        return None if n_vars <= 6 else 3


@dataclass(frozen=True)
class TestRecord:
    stage: str
    pair: tuple
    cond: tuple
    result: CITestResult


@dataclass
class TestLog:
    entries: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def append(self, stage: str, pair: tuple, cond: tuple, result: CITestResult) -> None:
        self.entries.append(TestRecord(stage, pair, cond, result))

    def warn(self, message: str) -> None:
        self.warnings.append(message)

    def counters(self) -> dict:
        out: dict = {}
        for rec in self.entries:
            out[rec.stage] = out.get(rec.stage, 0) + 1
        return out

    @property
    def n_tests(self) -> int:
        return len(self.entries)


class SepsetRecord:
    """Separating sets keyed by representative pair; lookups for translated
    pairs shift the stored set along with the pair."""

    def __init__(self):
        self._sets: dict = {}

    def record(self, u: LaggedNode, v: LaggedNode, cond) -> None:
        key, shift = canonical_pair(u, v)
        if key is None:
            raise ValueError(f"pair {u} - {v} cannot carry a separating set")
        self._sets[key] = tuple(w.shifted(-shift) for w in cond)

    def lookup(self, u: LaggedNode, v: LaggedNode):
        key, shift = canonical_pair(u, v)
        if key is None or key not in self._sets:
            return None
        return tuple(w.shifted(shift) for w in self._sets[key])

    def items(self):
        return sorted(
            self._sets.items(), key=lambda kv: (kv[0][0].sort_key(), kv[0][1].sort_key())
        )

    def __len__(self) -> int:
        return len(self._sets)

    def __contains__(self, pair) -> bool:
        key, _ = canonical_pair(*pair)
        return key is not None and key in self._sets


class DiscoveryResult(NamedTuple):
    graph: MixedGraph
    sepsets: SepsetRecord
    log: TestLog


class _CITester:
    """Dispatches the configured test over design-matrix columns, logging
    every call and deriving a fresh deterministic seed per call for the
    randomized tests."""

    def __init__(self, design: LaggedDesignMatrix, cfg: DiscoveryConfig, log: TestLog):
        self.design = design
        self.cfg = cfg
        self.log = log
        self.cache = GramCache()
        self.counter = 0

    def run(self, stage: str, u: LaggedNode, v: LaggedNode, cond) -> CITestResult:
        cond = tuple(cond)
        x = self.design.column(u)
        y = self.design.column(v)
        zmat = self.design.columns(cond)
        self.counter += 1
        seed = self.cfg.seed * 1_000_003 + self.counter
        name = self.cfg.ci_test
        try:
            if name == "parcorr":
                result = parcorr_test(x, y, zmat)
            elif name.startswith("kcit"):
                result = kcit_test(x, y, zmat, approx=name.split("-")[1], cache=self.cache)
            elif name.startswith("rcot"):
                result = rcot_test(x, y, zmat, approx=name.split("-")[1], seed=seed)
            else:
                result = cmiknn_test(x, y, zmat, seed=seed)
        except Exception as exc:
            labels = ", ".join(self.design.node_label(w) for w in cond) or "{}"
            raise RuntimeError(
                f"CI test {name} failed for pair ({self.design.node_label(u)}, "
                f"{self.design.node_label(v)}) given {labels}: {exc}"
            ) from exc
        self.log.append(stage, (u, v), cond, result)
        return result


def _sorted_nodes(nodes):
    return sorted(nodes, key=lambda w: w.sort_key())


def skeleton_search(design: LaggedDesignMatrix, cfg: DiscoveryConfig, *, tester=None, log=None):
    """Stage 2: prune the complete graph down to the causal skeleton.

    Returns (undirected graph, separating sets, test log). An edge is
    removed at the first conditioning set whose test p-value exceeds alpha;
    removals are committed only at level boundaries, and each variable pair
    is tested once at its representative alignment.
    """
    log = log if log is not None else TestLog()
    tester = tester if tester is not None else _CITester(design, cfg, log)
    n_vars, max_lag = design.n_vars, design.max_lag
    g = MixedGraph.full(n_vars, max_lag, design.names)
    sepsets = SepsetRecord()
    max_p: dict = {}
    cap = cfg.resolved_cap(n_vars)
    var_nodes = _sorted_nodes(
        LaggedNode(i, lag) for i in range(n_vars) for lag in range(max_lag + 1)
    )

    def run(stage, a, b, cond) -> CITestResult:
        res = tester.run(stage, a, b, cond)
        key, _ = canonical_pair(a, b)
        max_p[key] = max(max_p.get(key, 0.0), res.p_value)
        return res

    # time-edge phase: conditioning sets range over all variable vertices
    level = 0
    while cap is None or level <= cap:
        active = [
            (TIME_NODE, LaggedNode(i, 0))
            for i in range(n_vars)
            if g.has_edge(TIME_NODE, LaggedNode(i, 0))
        ]
        if not active or len(var_nodes) - 1 < level:
            break
        removals = []
        for t, v in active:
            pool = [w for w in var_nodes if w != v]
            for cond in itertools.combinations(pool, level):
                res = run(STAGE_TIME, t, v, cond)
                if res.p_value > cfg.alpha:
                    removals.append(((t, v), cond))
                    break
        for (t, v), cond in removals:
            g.remove_edge(t, v)
            sepsets.record(t, v, cond)
        level += 1

    # variable-pair phase: PC-stable neighbor pools, time node allowed
    rep_pairs = []
    for i in range(n_vars):
        for j in range(i + 1, n_vars):
            rep_pairs.append((LaggedNode(i, 0), LaggedNode(j, 0)))
    for lag in range(1, max_lag + 1):
        for i in range(n_vars):
            for j in range(n_vars):
                rep_pairs.append((LaggedNode(i, lag), LaggedNode(j, 0)))

    level = 0
    while cap is None or level <= cap:
        active = [(a, b) for a, b in rep_pairs if g.has_edge(a, b)]
        if not active:
            break
        snapshot = {}
        for a, b in active:
            for w in (a, b):
                if w not in snapshot:
                    snapshot[w] = set(g.neighbors(w))
        pools = {}
        eligible = False
        for a, b in active:
            pa = _sorted_nodes(snapshot[a] - {b})
            pb = _sorted_nodes(snapshot[b] - {a})
            pools[(a, b)] = (pa, pb)
            if max(len(pa), len(pb)) >= level:
                eligible = True
        if not eligible:
            break
        removals = []
        for a, b in active:
            pa, pb = pools[(a, b)]
            seen = set()
            removed = False
            for pool in (pa, pb):
                if removed or len(pool) < level:
                    continue
                for cond in itertools.combinations(pool, level):
                    fs = frozenset(cond)
                    if fs in seen:
                        continue
                    seen.add(fs)
                    res = run(STAGE_VAR, a, b, cond)
                    if res.p_value > cfg.alpha:
                        removals.append(((a, b), cond))
                        removed = True
                        break
        for (a, b), cond in removals:
            g.remove_edge(a, b)
            sepsets.record(a, b, cond)
        level += 1

    for edge in g.summary_edges():
        key, _ = canonical_pair(edge.src, edge.dst)
        g.set_max_p(edge.src, edge.dst, max_p.get(key, 0.0))
    return g, sepsets, log


# ---------------------------------------------------------------------------
# stage 3: orientation
# ---------------------------------------------------------------------------


def _contemp_digraph(g: MixedGraph) -> dict:
    adj: dict = {i: set() for i in range(g.n_vars)}
    for edge in g.summary_edges():
        if edge.mark == DIRECTED and not edge.src.is_time and edge.lag == 0:
            adj[edge.src.var].add(edge.dst.var)
    return adj


def _creates_contemp_cycle(g: MixedGraph, tail: LaggedNode, head: LaggedNode) -> bool:
    if tail.is_time or head.is_time or tail.lag != head.lag:
        return False
    adj = _contemp_digraph(g)
    # path head -> ... -> tail would close a cycle
    stack, seen = [head.var], set()
    while stack:
        cur = stack.pop()
        if cur == tail.var:
            return True
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(adj[cur])
    return False


def _try_orient(g: MixedGraph, tail: LaggedNode, head: LaggedNode, log: TestLog, rule: str) -> bool:
    if _creates_contemp_cycle(g, tail, head):
        log.warn(f"{rule}: skipped {tail} -> {head}, would close a directed cycle")
        return False
    g.orient(tail, head)
    return True


def _orient_colliders(g: MixedGraph, sepsets: SepsetRecord, log: TestLog) -> None:
    for c in _sorted_nodes(g.nodes()):
        nbrs = _sorted_nodes(g.neighbors(c))
        for a, b in itertools.combinations(nbrs, 2):
            if g.has_edge(a, b):
                continue
            sep = sepsets.lookup(a, b)
            if sep is None:
                continue  # pair was never tested (structurally absent)
            if c in sep:
                continue
            for tail in (a, b):
                mark, head = g.mark(tail, c)
                if mark == DIRECTED:
                    if head != c:
                        log.warn(
                            f"collider {a} -> {c} <- {b} conflicts with prior orientation "
                            f"{c} -> {tail}; keeping the prior arrow"
                        )
                    continue
                if c.is_time:
                    log.warn(f"collider at {c} suppressed: arrows into the time node are invalid")
                    continue
                if not tail.is_time and tail.lag < c.lag:
                    log.warn(
                        f"collider {tail} -> {c} suppressed: arrow against the time order"
                    )
                    continue
                _try_orient(g, tail, c, log, "collider")


def _meek_closure(g: MixedGraph, log: TestLog) -> None:
    """Meek rules R1 to R4 applied until nothing changes. Orientations apply
    to whole translation classes, so the scan is repeated on the unrolled
    graph until a fixed point."""
    nodes = _sorted_nodes(g.nodes())
    changed = True
    while changed:
        changed = False
        for b in nodes:
            nbrs = _sorted_nodes(g.neighbors(b))
            # R1: a -> b, b - c, a and c nonadjacent => b -> c
            for a in nbrs:
                if not g.is_directed(a, b):
                    continue
                for c in nbrs:
                    if c == a or not g.is_undirected(b, c) or g.has_edge(a, c):
                        continue
                    changed |= _try_orient(g, b, c, log, "meek-R1")
            # R2: b -> m -> c with b - c => b -> c
            for c in nbrs:
                if not g.is_undirected(b, c):
                    continue
                for m in nbrs:
                    if m == c or not g.is_directed(b, m):
                        continue
                    if g.has_edge(m, c) and g.is_directed(m, c):
                        changed |= _try_orient(g, b, c, log, "meek-R2")
                        break
            und = [w for w in nbrs if g.is_undirected(b, w)]
            # R3: b - c, b - d1, b - d2, d1 -> c, d2 -> c, d1/d2 nonadjacent => b -> c
            for c in und:
                into_c = [w for w in und if w != c and g.is_directed(w, c)]
                for d1, d2 in itertools.combinations(into_c, 2):
                    if not g.has_edge(d1, d2):
                        changed |= _try_orient(g, b, c, log, "meek-R3")
                        break
            # R4: b - c, with d -> m -> c a directed chain, b adjacent to both
            # d and m, and c nonadjacent to d => b -> c
            for c in und:
                if not g.is_undirected(b, c):
                    continue
                fired = False
                for m in _sorted_nodes(g.neighbors(c)):
                    if not g.is_directed(m, c) or not g.has_edge(b, m):
                        continue
                    for d in _sorted_nodes(g.neighbors(m)):
                        if d == c or d == b or not g.is_directed(d, m):
                            continue
                        if g.has_edge(b, d) and not g.has_edge(c, d):
                            changed |= _try_orient(g, b, c, log, "meek-R4")
                            fired = True
                            break
                    if fired:
                        break


def orient_stage3(skeleton: MixedGraph, sepsets: SepsetRecord, *, log: TestLog = None) -> MixedGraph:
    """Stage 3: prior-knowledge orientation (time node, arrow of time),
    collider orientation from separating sets, then Meek closure. Conflicts
    are logged as warnings and resolved in favor of the prior knowledge."""
    log = log if log is not None else TestLog()
    g = skeleton.copy()
    for i in range(g.n_vars):
        v = LaggedNode(i, 0)
        if g.has_edge(TIME_NODE, v) and not g.is_directed(TIME_NODE, v):
            g.orient(TIME_NODE, v)
    for edge in g.summary_edges():
        if edge.mark == UNDIRECTED and not edge.src.is_time and edge.lag > 0:
            g.orient(edge.src, edge.dst)
    _orient_colliders(g, sepsets, log)
    _meek_closure(g, log)
    return g


# ---------------------------------------------------------------------------
# stage 4: orientation by independence of mechanism drift
# ---------------------------------------------------------------------------


def _block_descriptors(design: LaggedDesignMatrix, g: MixedGraph, cause: LaggedNode,
                       effect: LaggedNode, n_blocks: int):
    x = design.column(cause)
    y = design.column(effect)
    parents = [
        w for w in g.directed_parents(effect) if not w.is_time and w != cause
    ]
    pmat = design.columns(_sorted_nodes(parents))
    marginal = []
    conditional = []
    for idx in np.array_split(np.arange(design.n_rows), n_blocks):
        xb, yb = x[idx], y[idx]
        marginal.append([xb.mean(), xb.var()])
        cols = [np.ones(idx.size), xb]
        if pmat is not None:
            cols.extend(pmat[idx].T)
        dmat = np.column_stack(cols)
        coef, *_ = np.linalg.lstsq(dmat, yb, rcond=None)
        resid = yb - dmat @ coef
        conditional.append(list(coef) + [resid.var()])
    return np.asarray(marginal), np.asarray(conditional)


def _max_abs_corr(a: np.ndarray, b: np.ndarray) -> float:
    best = 0.0
    for i in range(a.shape[1]):
        u = a[:, i] - a[:, i].mean()
        su = np.sqrt((u * u).sum())
        if su <= 0:
            continue
        for j in range(b.shape[1]):
            v = b[:, j] - b[:, j].mean()
            sv = np.sqrt((v * v).sum())
            if sv <= 0:
                continue
            best = max(best, abs(float(u @ v) / (su * sv)))
    return best


def module_change_score(design: LaggedDesignMatrix, g: MixedGraph, cause: LaggedNode,
                        effect: LaggedNode, n_blocks: int) -> float:
    """Dependence between the drift of the candidate cause's marginal
    (block mean and variance) and the drift of the candidate effect's
    mechanism (block regression coefficients and residual variance). Lower
    means the two modules change more independently, which favors that
    causal direction."""
    marginal, conditional = _block_descriptors(design, g, cause, effect, n_blocks)
    return _max_abs_corr(np.diff(marginal, axis=0), np.diff(conditional, axis=0))


def orient_stage4(g: MixedGraph, design: LaggedDesignMatrix, cfg: DiscoveryConfig,
                  *, log: TestLog = None) -> MixedGraph:
    """Stage 4: orient undirected edges between two time-adjacent variables
    in the direction whose module drifts look more independent, when the
    relative score gap clears the configured margin. Indecision leaves the
    edge undirected."""
    log = log if log is not None else TestLog()
    g = g.copy()
    n_blocks = cfg.stage4_window
    if n_blocks < 2 or design.n_rows // n_blocks < cfg.stage4_min_rows:
        log.warn(
            f"stage 4 disabled: {design.n_rows} rows over {n_blocks} blocks is below "
            f"{cfg.stage4_min_rows} rows per block"
        )
        return g
    eligible = []
    for edge in g.summary_edges():
        if edge.mark != UNDIRECTED or edge.src.is_time or edge.lag != 0:
            continue
        if g.has_edge(TIME_NODE, LaggedNode(edge.src.var, 0)) and g.has_edge(
            TIME_NODE, LaggedNode(edge.dst.var, 0)
        ):
            eligible.append((edge.src, edge.dst))
    oriented = False
    for u, v in eligible:
        s_uv = module_change_score(design, g, u, v, n_blocks)
        s_vu = module_change_score(design, g, v, u, n_blocks)
        hi, lo = max(s_uv, s_vu), min(s_uv, s_vu)
        if hi <= 0 or not np.isfinite(hi):
            continue
        if (hi - lo) / hi > cfg.stage4_margin:
            tail, head = (u, v) if s_uv < s_vu else (v, u)
            if _try_orient(g, tail, head, log, "stage4"):
                oriented = True
    if oriented:
        _meek_closure(g, log)
    return g


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def discover(ds: TimeSeriesDataset, cfg: DiscoveryConfig) -> DiscoveryResult:
    """Run all four stages on a dataset and return (graph, sepsets, log)."""
    sized = TimeSeriesDataset(ds.values, ds.names, max_lag=cfg.max_lag)
    design = lag_embed(standardize(sized), cfg.max_lag)
    log = TestLog()
    tester = _CITester(design, cfg, log)
    skeleton, sepsets, _ = skeleton_search(design, cfg, tester=tester, log=log)
    graph = orient_stage3(skeleton, sepsets, log=log)
    if cfg.stage4_enabled:
        graph = orient_stage4(graph, design, cfg, log=log)
    return DiscoveryResult(graph, sepsets, log)
