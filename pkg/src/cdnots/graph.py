"""Lagged mixed graphs: vertices, edge marks, and serialization.

Vertices are either a (variable, lag) pair or the distinguished time node.
Edges are stored once per translation class, anchored at lag 0, so the
"same structure at every lag" consistency rule holds by construction.
Translated copies are materialized on demand by the adjacency queries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional

UNDIRECTED = "undirected"
DIRECTED = "directed"

_DOT_COLOR_STRONG = "black"
_DOT_COLOR_MID = "gray50"
_DOT_COLOR_WEAK = "red"


@dataclass(frozen=True)
class LaggedNode:
    """A graph vertex: variable ``var`` observed ``lag`` steps back, or the
    time node when ``var`` is None (lag is then always 0)."""

    var: Optional[int]
    lag: int = 0

    @property
    def is_time(self) -> bool:
        return self.var is None

    def sort_key(self) -> tuple:
        # time node sorts first
        return (0, 0, 0) if self.var is None else (1, self.var, self.lag)

    def shifted(self, offset: int) -> "LaggedNode":
        if self.is_time:
            return self
        return LaggedNode(self.var, self.lag + offset)

    def __repr__(self) -> str:
        if self.is_time:
            return "T"
        return f"V{self.var}@{self.lag}"


TIME_NODE = LaggedNode(None, 0)


@dataclass
class EdgeInfo:
    mark: str  # UNDIRECTED or DIRECTED
    head: Optional[LaggedNode]  # arrow head, in representative coordinates
    max_p: float = 0.0


@dataclass(frozen=True)
class SummaryEdge:
    """One entry per translation class of edges.

    ``src -> dst`` is the direction for directed marks; for undirected marks
    the pair is reported in representative order. ``lag`` is the lag offset
    between cause and effect (0 for contemporaneous edges).
    """

    src: LaggedNode
    dst: LaggedNode
    lag: int
    mark: str
    max_p: float


def canonical_pair(u: LaggedNode, v: LaggedNode):
    """Representative form of an unordered node pair plus the lag shift that
    maps the representative back onto (u, v). Returns (key, shift) or
    (None, 0) when the pair can never carry an edge (self pairs, time node
    against a lagged vertex)."""
    if u == v:
        raise ValueError(f"self edge on {u}")
    if u.is_time and v.is_time:
        raise ValueError("both nodes are the time node")
    if u.is_time or v.is_time:
        t, w = (u, v) if u.is_time else (v, u)
        if w.lag != 0:
            return None, 0
        return (t, w), 0
    shift = min(u.lag, v.lag)
    a = LaggedNode(u.var, u.lag - shift)
    b = LaggedNode(v.var, v.lag - shift)
    if a.lag == 0 and b.lag == 0:
        if a.var > b.var:
            a, b = b, a
        return (a, b), shift
    # exactly one endpoint keeps a positive lag: store it first
    if a.lag == 0:
        a, b = b, a
    return (a, b), shift


def _is_canonical_key(key) -> bool:
    a, b = key
    if a.is_time:
        return (not b.is_time) and b.lag == 0
    if b.is_time:
        return False
    if a.lag == 0 and b.lag == 0:
        return a.var < b.var
    return a.lag > 0 and b.lag == 0


class MixedGraph:
    """Mixed graph over all (variable, lag) vertices plus the time node.

    Mutating methods keep the edge store in representative form; they are
    meant to be driven by the discovery engine. Snapshots used elsewhere
    should be treated as immutable.
    """

    def __init__(self, n_vars: int, max_lag: int, names: Iterable[str]):
        names = tuple(names)
        if len(names) != n_vars:
            raise ValueError(f"expected {n_vars} names, got {len(names)}")
        if max_lag < 0:
            raise ValueError("max_lag must be >= 0")
        self.n_vars = n_vars
        self.max_lag = max_lag
        self.names = names
        self._edges: dict = {}

    # -- construction -----------------------------------------------------

    @classmethod
    def full(cls, n_vars: int, max_lag: int, names: Iterable[str]) -> "MixedGraph":
        """Complete undirected graph: every representative variable pair and
        a time edge to every lag-0 vertex."""
        g = cls(n_vars, max_lag, names)
        for i in range(n_vars):
            g._edges[(TIME_NODE, LaggedNode(i, 0))] = EdgeInfo(UNDIRECTED, None)
        for i in range(n_vars):
            for j in range(i + 1, n_vars):
                g._edges[(LaggedNode(i, 0), LaggedNode(j, 0))] = EdgeInfo(UNDIRECTED, None)
        for lag in range(1, max_lag + 1):
            for i in range(n_vars):
                for j in range(n_vars):
                    g._edges[(LaggedNode(i, lag), LaggedNode(j, 0))] = EdgeInfo(UNDIRECTED, None)
        return g

    def copy(self) -> "MixedGraph":
        g = MixedGraph(self.n_vars, self.max_lag, self.names)
        g._edges = {k: EdgeInfo(e.mark, e.head, e.max_p) for k, e in self._edges.items()}
        return g

    # -- vertex sets -------------------------------------------------------

    def variable_nodes(self) -> list:
        return [
            LaggedNode(i, lag)
            for i in range(self.n_vars)
            for lag in range(self.max_lag + 1)
        ]

    def nodes(self) -> list:
        return [TIME_NODE] + self.variable_nodes()

    def _check_node(self, u: LaggedNode) -> None:
        if u.is_time:
            return
        if not (0 <= u.var < self.n_vars) or not (0 <= u.lag <= self.max_lag):
            raise ValueError(f"node {u} outside graph with N={self.n_vars}, L={self.max_lag}")

    # -- edge queries -------------------------------------------------------

    def has_edge(self, u: LaggedNode, v: LaggedNode) -> bool:
        self._check_node(u)
        self._check_node(v)
        key, _ = canonical_pair(u, v)
        return key is not None and key in self._edges

    def mark(self, u: LaggedNode, v: LaggedNode):
        """Returns (mark, head) where head is expressed in (u, v) coordinates,
        or None when the edge is absent."""
        key, shift = canonical_pair(u, v)
        if key is None or key not in self._edges:
            return None
        info = self._edges[key]
        if info.mark == UNDIRECTED:
            return UNDIRECTED, None
        return DIRECTED, info.head.shifted(shift)

    def is_directed(self, src: LaggedNode, dst: LaggedNode) -> bool:
        m = self.mark(src, dst)
        return m is not None and m[0] == DIRECTED and m[1] == dst

    def is_undirected(self, u: LaggedNode, v: LaggedNode) -> bool:
        m = self.mark(u, v)
        return m is not None and m[0] == UNDIRECTED

    def max_p(self, u: LaggedNode, v: LaggedNode) -> float:
        key, _ = canonical_pair(u, v)
        if key is None or key not in self._edges:
            raise KeyError(f"no edge {u} - {v}")
        return self._edges[key].max_p

    def neighbors(self, u: LaggedNode) -> list:
        """Adjacent vertices of u in the materialized (translated) graph."""
        self._check_node(u)
        out = []
        for w in self.nodes():
            if w == u:
                continue
            if u.is_time and w.is_time:
                continue
            key, _ = canonical_pair(u, w)
            if key is not None and key in self._edges:
                out.append(w)
        return out

    def edge_count(self) -> int:
        return len(self._edges)

    # -- mutation -----------------------------------------------------------

    def remove_edge(self, u: LaggedNode, v: LaggedNode) -> None:
        key, _ = canonical_pair(u, v)
        if key is None or key not in self._edges:
            raise KeyError(f"no edge {u} - {v}")
        del self._edges[key]

    def set_max_p(self, u: LaggedNode, v: LaggedNode, p: float) -> None:
        key, _ = canonical_pair(u, v)
        if key is None or key not in self._edges:
            raise KeyError(f"no edge {u} - {v}")
        self._edges[key].max_p = float(p)

    def orient(self, src: LaggedNode, dst: LaggedNode) -> None:
        """Direct the existing edge src -> dst (and every translated copy)."""
        if dst.is_time:
            raise ValueError("cannot orient an edge into the time node")
        if not src.is_time and not dst.is_time and src.lag < dst.lag:
            raise ValueError(f"cannot orient {src} -> {dst}: arrow against time order")
        key, shift = canonical_pair(src, dst)
        if key is None or key not in self._edges:
            raise KeyError(f"no edge {src} - {dst}")
        head_rep = dst.shifted(-shift)
        info = self._edges[key]
        if info.mark == DIRECTED and info.head != head_rep:
            raise ValueError(f"edge {src} - {dst} already oriented the other way")
        info.mark = DIRECTED
        info.head = head_rep

    # -- summaries ------------------------------------------------------------

    def _validated_items(self):
        for key in self._edges:
            if not _is_canonical_key(key):
                raise ValueError(
                    f"consistency violation: edge stored for non-representative pair {key[0]} - {key[1]}"
                )
        return sorted(self._edges.items(), key=lambda kv: (kv[0][0].sort_key(), kv[0][1].sort_key()))

    def summary_edges(self) -> list:
        """One SummaryEdge per translation class, in a stable order."""
        out = []
        for (a, b), info in self._validated_items():
            lag = a.lag if not a.is_time else 0
            if info.mark == DIRECTED:
                head = info.head
                tail = b if head == a else a
                out.append(SummaryEdge(tail, head, lag, DIRECTED, info.max_p))
            else:
                out.append(SummaryEdge(a, b, lag, UNDIRECTED, info.max_p))
        return out

    def directed_parents(self, v: LaggedNode) -> list:
        return [w for w in self.neighbors(v) if self.is_directed(w, v)]

    def is_acyclic(self) -> bool:
        """True when the directed part of the unrolled graph has no cycle.

        Directed lag edges always point toward lag 0 and the time node is a
        source, so a cycle can only live inside the contemporaneous lag-0
        subgraph; that is what gets checked.
        """
        adj = {i: [] for i in range(self.n_vars)}
        for (a, b), info in self._edges.items():
            if info.mark != DIRECTED or a.is_time:
                continue
            if a.lag == 0 and b.lag == 0:
                tail, head = (a, b) if info.head == b else (b, a)
                adj[tail.var].append(head.var)
        state = {i: 0 for i in range(self.n_vars)}  # 0 new, 1 open, 2 done

        def visit(i) -> bool:
            state[i] = 1
            for j in adj[i]:
                if state[j] == 1:
                    return False
                if state[j] == 0 and not visit(j):
                    return False
            state[i] = 2
            return True

        return all(state[i] != 0 or visit(i) for i in range(self.n_vars))

    # -- serialization ----------------------------------------------------------

    @staticmethod
    def _node_to_json(u: LaggedNode) -> dict:
        if u.is_time:
            return {"T": True}
        return {"var": u.var, "lag": u.lag}

    @staticmethod
    def _node_from_json(obj: dict, where: str) -> LaggedNode:
        if not isinstance(obj, dict):
            raise ValueError(f"{where}: expected an object, got {obj!r}")
        if obj.get("T"):
            return TIME_NODE
        if "var" not in obj or "lag" not in obj:
            raise ValueError(f"{where}: node needs 'var' and 'lag' (or 'T': true)")
        return LaggedNode(int(obj["var"]), int(obj["lag"]))

    def to_json(self) -> str:
        edges = []
        for (a, b), info in self._validated_items():
            if info.mark == DIRECTED:
                head = info.head
                tail = b if head == a else a
                src, dst = tail, head
            else:
                src, dst = a, b
            edges.append(
                {
                    "from": self._node_to_json(src),
                    "to": self._node_to_json(dst),
                    "mark": info.mark,
                    "max_p": info.max_p,
                }
            )
        doc = {
            "n_vars": self.n_vars,
            "max_lag": self.max_lag,
            "names": list(self.names),
            "edges": edges,
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MixedGraph":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed graph JSON: {exc}") from None
        for field in ("n_vars", "max_lag", "names", "edges"):
            if field not in doc:
                raise ValueError(f"graph JSON missing '{field}'")
        g = cls(int(doc["n_vars"]), int(doc["max_lag"]), [str(s) for s in doc["names"]])
        for idx, e in enumerate(doc["edges"]):
            where = f"edges[{idx}]"
            src = cls._node_from_json(e.get("from"), where + ".from")
            dst = cls._node_from_json(e.get("to"), where + ".to")
            g._check_node(src)
            g._check_node(dst)
            mark = e.get("mark")
            if mark not in (UNDIRECTED, DIRECTED):
                raise ValueError(f"{where}.mark: unknown mark {mark!r}")
            max_p = float(e.get("max_p", 0.0))
            if not 0.0 <= max_p <= 1.0:
                raise ValueError(f"{where}.max_p: {max_p} outside [0, 1]")
            key, shift = canonical_pair(src, dst)
            if key is None:
                raise ValueError(f"{where}: pair {src} - {dst} cannot carry an edge")
            if mark == DIRECTED:
                if dst.is_time:
                    raise ValueError(f"{where}: arrow into the time node")
                if not src.is_time and src.lag < dst.lag:
                    raise ValueError(f"{where}: arrow {src} -> {dst} against the time order")
            info = EdgeInfo(mark, dst.shifted(-shift) if mark == DIRECTED else None, max_p)
            if key in g._edges:
                old = g._edges[key]
                if (old.mark, old.head, old.max_p) != (info.mark, info.head, info.max_p):
                    raise ValueError(
                        f"{where}: conflicting duplicate of pair {key[0]} - {key[1]}"
                    )
                continue
            g._edges[key] = info
        return g

    # -- DOT export -----------------------------------------------------------

    def _dot_id(self, u: LaggedNode) -> str:
        if u.is_time:
            return "T"
        name = self.names[u.var]
        label = name if u.lag == 0 else f"{name}_l{u.lag}"
        if label.replace("_", "").isalnum() and not label[0].isdigit() and label != "T":
            return label
        return '"' + label.replace('"', '\\"') + '"'

    def to_dot(self) -> str:
        lines = ["digraph g {", "  T [shape=box];"]
        for u in self.variable_nodes():
            lines.append(f"  {self._dot_id(u)};")
        for edge in self.summary_edges():
            if edge.max_p <= 0.01:
                color = _DOT_COLOR_STRONG
            elif edge.max_p <= 0.05:
                color = _DOT_COLOR_MID
            else:
                color = _DOT_COLOR_WEAK
            attrs = f'color={color}'
            if edge.mark == UNDIRECTED:
                attrs += ", dir=none"
            lines.append(f"  {self._dot_id(edge.src)} -> {self._dot_id(edge.dst)} [{attrs}];")
        lines.append("}")
        return "\n".join(lines) + "\n"

    def __eq__(self, other) -> bool:
        if not isinstance(other, MixedGraph):
            return NotImplemented
        return (
            self.n_vars == other.n_vars
            and self.max_lag == other.max_lag
            and self.names == other.names
            and {k: (e.mark, e.head, e.max_p) for k, e in self._edges.items()}
            == {k: (e.mark, e.head, e.max_p) for k, e in other._edges.items()}
        )

    def __repr__(self) -> str:
        return f"MixedGraph(N={self.n_vars}, L={self.max_lag}, edges={len(self._edges)})"
