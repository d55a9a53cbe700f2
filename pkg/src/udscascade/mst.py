"""Maximum spanning arborescence (Chu-Liu/Edmonds) over dense score matrices."""

from __future__ import annotations

import itertools

import numpy as np

NEG_INF = -np.inf


def _find_cycle(heads: np.ndarray) -> list[int] | None:
    n = len(heads)
    color = np.zeros(n, dtype=np.int8)  # 0 new, 1 on current path, 2 done
    for start in range(1, n):
        if color[start]:
            continue
        path = []
        node = start
        while node > 0 and color[node] == 0:
            color[node] = 1
            path.append(node)
            node = heads[node]
        if node > 0 and color[node] == 1:
            return path[path.index(node):]
        for p in path:
            color[p] = 2
    return None


def chu_liu_edmonds(scores: np.ndarray) -> np.ndarray:
    """Best arborescence rooted at node 0.

    ``scores[h, d]`` is the weight of arc ``h -> d``; ``-inf`` marks a missing
    arc.  Returns ``heads`` with ``heads[0] == -1``.
    """
    s = np.array(scores, dtype=np.float64)
    n = s.shape[0]
    np.fill_diagonal(s, NEG_INF)
    s[:, 0] = NEG_INF
    heads = s.argmax(axis=0)
    heads[0] = -1
    cycle = _find_cycle(heads)
    if cycle is None:
        return heads
    in_cycle = np.zeros(n, dtype=bool)
    in_cycle[cycle] = True
    cyc = np.flatnonzero(in_cycle)
    rest = np.flatnonzero(~in_cycle)  # contains 0
    m = len(rest)
    sub = np.full((m + 1, m + 1), NEG_INF)
    sub[:m, :m] = s[np.ix_(rest, rest)]
    enter = s[np.ix_(rest, cyc)] - s[heads[cyc], cyc][None, :]
    best_in = enter.argmax(axis=1)
    sub[:m, m] = enter[np.arange(m), best_in]
    leave = s[np.ix_(cyc, rest)]
    best_out = leave.argmax(axis=0)
    sub[m, :m] = leave[best_out, np.arange(m)]
    sub_heads = chu_liu_edmonds(sub)
    new_heads = heads.copy()
    for k, node in enumerate(rest):
        if node == 0:
            continue
        h = sub_heads[k]
        new_heads[node] = rest[h] if h < m else cyc[best_out[k]]
    h = sub_heads[m]
    new_heads[cyc[best_in[h]]] = rest[h]
    return new_heads


def tree_score(scores: np.ndarray, heads) -> float:
    """Total of ``scores[dep, head]`` (0-based dependents, 1-based heads, root = self)."""
    return float(sum(scores[i, h - 1] for i, h in enumerate(heads)))


def max_spanning_tree(scores: np.ndarray) -> list[int]:
    """Best single-root tree for a ``K x K`` matrix ``scores[dep, head]``.

    The diagonal holds root scores.  Every root candidate is tried, so the
    result is the exact optimum over all single-rooted trees.  Returns
    1-based heads with the root pointing at itself.
    """
    k = scores.shape[0]
    if k == 1:
        return [1]
    # the unconstrained optimum is exact whenever it happens to have one root
    arcs = np.full((k + 1, k + 1), NEG_INF)
    arcs[1:, 1:] = scores.T
    arcs[0, 1:] = np.diag(scores)
    heads = chu_liu_edmonds(arcs)
    if int(np.sum(heads[1:] == 0)) == 1:
        return [d if heads[d] == 0 else int(heads[d]) for d in range(1, k + 1)]
    best, best_heads = NEG_INF, None
    for r in range(k):
        arcs = np.full((k + 1, k + 1), NEG_INF)
        arcs[1:, 1:] = scores.T
        arcs[0, r + 1] = scores[r, r]
        heads = chu_liu_edmonds(arcs)
        out = [r + 1 if d == r + 1 else int(heads[d]) for d in range(1, k + 1)]
        total = tree_score(scores, out)
        if total > best:
            best, best_heads = total, out
    return best_heads


def brute_force_tree(scores: np.ndarray) -> tuple[float, list[int]]:
    """Exhaustive search over all single-root trees; only for tiny ``K``."""
    from .graph import tree_problems

    k = scores.shape[0]
    best, best_heads = NEG_INF, None
    for heads in itertools.product(range(1, k + 1), repeat=k):
        if tree_problems(list(heads)):
            continue
        total = tree_score(scores, heads)
        if total > best:
            best, best_heads = total, list(heads)
    return best, best_heads
