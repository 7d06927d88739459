"""Independent reference implementations used to pin expected test values.

Everything here is deliberately brute force: permutation nulls, path
enumeration for d-separation, exhaustive orientation enumeration, and
breadth-first search over graph edits. None of it shares code paths with
the library logic it checks.
"""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np

from cdnots.citest import residualized_grams


# ---------------------------------------------------------------------------
# permutation null for the kernel test
# ---------------------------------------------------------------------------


def kcit_permutation_pvalue(x, y, z=None, n_perm=1000, seed=0):
    """Exact-style null: permute the rows of one residualized Gram and count
    how often the trace statistic meets or beats the observed one."""
    kxr, kyr = residualized_grams(x, y, z)
    n = kxr.shape[0]
    scale = n if z is None else 1.0
    observed = float((kxr * kyr).sum()) / scale
    rng = np.random.default_rng(seed)
    count = 0
    for _ in range(n_perm):
        perm = rng.permutation(n)
        if float((kxr * kyr[np.ix_(perm, perm)]).sum()) / scale >= observed:
            count += 1
    return (1.0 + count) / (n_perm + 1.0)


# ---------------------------------------------------------------------------
# d-separation by path enumeration (small graphs only)
# ---------------------------------------------------------------------------


def _simple_paths(adjacent, src, dst):
    stack = [(src, [src])]
    while stack:
        node, path = stack.pop()
        for nxt in sorted(adjacent[node]):
            if nxt in path:
                continue
            if nxt == dst:
                yield path + [nxt]
            else:
                stack.append((nxt, path + [nxt]))


def _descendants(parents, node):
    children = {i: set() for i in parents}
    for child, pars in parents.items():
        for p in pars:
            children[p].add(child)
    out, frontier = set(), [node]
    while frontier:
        cur = frontier.pop()
        for ch in children[cur]:
            if ch not in out:
                out.add(ch)
                frontier.append(ch)
    return out


def d_separated(parents: dict, x, y, given) -> bool:
    """True when every undirected path between x and y is blocked by the
    conditioning set, checking colliders against descendants."""
    cond = set(given)
    nodes = set(parents)
    adjacent = {i: set() for i in nodes}
    for child, pars in parents.items():
        for p in pars:
            adjacent[child].add(p)
            adjacent[p].add(child)
    for path in _simple_paths(adjacent, x, y):
        blocked = False
        for idx in range(1, len(path) - 1):
            prev, mid, nxt = path[idx - 1], path[idx], path[idx + 1]
            is_collider = prev in parents[mid] and nxt in parents[mid]
            if is_collider:
                if mid not in cond and not (_descendants(parents, mid) & cond):
                    blocked = True
                    break
            elif mid in cond:
                blocked = True
                break
        if not blocked:
            return False
    return True


def skeleton_and_sepsets(parents: dict):
    """Skeleton adjacencies of a DAG plus, for each nonadjacent pair, the
    first (smallest, lексicographically earliest) d-separating subset."""
    nodes = sorted(parents)
    adjacent = set()
    for child, pars in parents.items():
        for p in pars:
            adjacent.add(frozenset((child, p)))
    sepsets = {}
    for a, b in itertools.combinations(nodes, 2):
        if frozenset((a, b)) in adjacent:
            continue
        rest = [w for w in nodes if w not in (a, b)]
        found = None
        for size in range(len(rest) + 1):
            for sub in itertools.combinations(rest, size):
                if d_separated(parents, a, b, sub):
                    found = sub
                    break
            if found is not None:
                break
        sepsets[frozenset((a, b))] = found
    return adjacent, sepsets


# ---------------------------------------------------------------------------
# forced orientations by enumerating consistent DAG extensions
# ---------------------------------------------------------------------------


def _unshielded_colliders(orient: dict, adjacent: set, nodes) -> set:
    found = set()
    for c in nodes:
        into_c = [a for a in nodes if a != c and orient.get(frozenset((a, c))) == c]
        for a, b in itertools.combinations(sorted(into_c), 2):
            if frozenset((a, b)) not in adjacent:
                found.add((min(a, b), c, max(a, b)))
    return found


def _is_acyclic(orient: dict, nodes) -> bool:
    children = {i: set() for i in nodes}
    for pair, head in orient.items():
        a, b = sorted(pair)
        tail = b if head == a else a
        children[tail].add(head)
    state = {i: 0 for i in nodes}

    def visit(i):
        state[i] = 1
        for j in children[i]:
            if state[j] == 1 or (state[j] == 0 and not visit(j)):
                return False
        state[i] = 2
        return True

    return all(state[i] != 0 or visit(i) for i in nodes)


def forced_orientations(nodes, adjacent: set, colliders: set, background: dict = None):
    """For every skeleton edge, the direction shared by ALL acyclic
    orientations whose unshielded collider set equals ``colliders`` (and
    that agree with ``background`` arrows), or None when both directions
    occur. Returns (mapping, n_extensions)."""
    background = background or {}
    edges = sorted(tuple(sorted(e)) for e in adjacent)
    free = [e for e in edges if frozenset(e) not in background]
    verdicts = {frozenset(e): set() for e in edges}
    n_ext = 0
    for choice in itertools.product((0, 1), repeat=len(free)):
        orient = {frozenset(e): background[frozenset(e)] for e in edges if frozenset(e) in background}
        for (a, b), bit in zip(free, choice):
            orient[frozenset((a, b))] = b if bit == 0 else a
        if not _is_acyclic(orient, nodes):
            continue
        if _unshielded_colliders(orient, adjacent, nodes) != colliders:
            continue
        n_ext += 1
        for pair, head in orient.items():
            verdicts[pair].add(head)
    forced = {
        pair: (next(iter(heads)) if len(heads) == 1 else None)
        for pair, heads in verdicts.items()
    }
    return forced, n_ext


# ---------------------------------------------------------------------------
# structural Hamming distance by breadth-first edit search
# ---------------------------------------------------------------------------


def shd_edit_oracle(marks_a: dict, marks_b: dict, max_depth: int = 12) -> int:
    """Minimum number of edge insertions, deletions, or mark changes turning
    one summary-edge map into another. Marks are (key -> head-or-None).
    Brute force over the union universe of keys; small inputs only."""
    universe = sorted(set(marks_a) | set(marks_b))
    mark_options: dict = {}
    for key in universe:
        opts = {None}
        for marks in (marks_a, marks_b):
            if key in marks and marks[key] is not None:
                opts.add(marks[key])
        # contemporaneous pairs admit both arrow directions
        if len(key) == 3 and key[2] == 0 and key[0] != key[1]:
            opts.update(key[:2])
        mark_options[key] = sorted(opts, key=lambda v: (v is None, v))

    def freeze(marks):
        return tuple(sorted((k, marks[k]) for k in marks))

    start, goal = freeze(marks_a), freeze(marks_b)
    if start == goal:
        return 0
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        state, depth = queue.popleft()
        if depth >= max_depth:
            continue
        current = dict(state)
        moves = []
        for key in universe:
            if key in current:
                moves.append({k: v for k, v in current.items() if k != key})
                for mark in mark_options[key]:
                    if mark != current[key]:
                        alt = dict(current)
                        alt[key] = mark
                        moves.append(alt)
            else:
                for mark in mark_options[key]:
                    alt = dict(current)
                    alt[key] = mark
                    moves.append(alt)
        for alt in moves:
            frozen = freeze(alt)
            if frozen == goal:
                return depth + 1
            if frozen not in seen:
                seen.add(frozen)
                queue.append((frozen, depth + 1))
    raise RuntimeError("edit search exceeded max depth")
