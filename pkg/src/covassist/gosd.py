"""
Graph of strong dependence, connected-subgraph enumeration and the
expanded graph used to form post-screening components.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

from .errors import InvalidInput, InvalidParameter


@dataclass(frozen=True, eq=False)
class Gosd:
    """
    Undirected graph on ``0..p-1`` with sorted neighbor arrays.

    When ``radius > 0`` the graph is the expanded graph of the base
    adjacency: ``i ~ j`` iff some ``k`` within ``radius`` of ``i`` and some
    ``k'`` within ``radius`` of ``j`` are adjacent in the base graph.
    Expanded neighborhoods are computed on demand, never stored.
    """

    p: int
    adjacency: tuple
    delta: float = 0.0
    radius: int = 0

    def neighbors(self, i: int) -> np.ndarray:
        if self.radius == 0:
            return self.adjacency[i]
        lo, hi = self._intervals(i)
        if lo.size == 0:
            return np.empty(0, dtype=np.int64)
        out = np.concatenate([np.arange(a, b + 1) for a, b in zip(lo, hi)])
        return out[out != i]

    def _intervals(self, i: int):
        """Disjoint sorted intervals covering the expanded neighborhood of ``i``."""
        r = self.radius
        window = range(max(0, i - r), min(self.p, i + r + 1))
        hits = [self.adjacency[k] for k in window]
        hits = np.unique(np.concatenate(hits)) if hits else np.empty(0, dtype=np.int64)
        if hits.size == 0:
            return hits, hits
        lo = np.maximum(hits - r, 0)
        hi = np.minimum(hits + r, self.p - 1)
        # merge overlapping or touching intervals
        starts = np.concatenate(([True], lo[1:] > hi[:-1] + 1))
        group = np.cumsum(starts) - 1
        return lo[starts], np.maximum.reduceat(hi, np.flatnonzero(starts)) if group.size else hi

    def degree(self, i: int) -> int:
        return int(self.neighbors(i).size)

    @property
    def max_degree(self) -> int:
        if self.p == 0:
            return 0
        return max(self.degree(i) for i in range(self.p))

    def degrees(self) -> np.ndarray:
        return np.array([self.degree(i) for i in range(self.p)], dtype=np.int64)

    def edges(self):
        """Iterate over edges ``(i, j)`` with ``i < j``."""
        for i in range(self.p):
            for j in self.neighbors(i):
                if j > i:
                    yield i, int(j)

    def has_edge(self, i: int, j: int) -> bool:
        nb = self.neighbors(i)
        k = np.searchsorted(nb, j)
        return bool(k < nb.size and nb[k] == j)


def from_edges(p: int, edges: Iterable[Sequence[int]], delta: float = 0.0) -> Gosd:
    """Build a graph on ``0..p-1`` from an edge list."""
    adj = [set() for _ in range(p)]
    for i, j in edges:
        if not (0 <= i < p and 0 <= j < p):
            raise InvalidInput(f"edge ({i}, {j}) outside 0..{p - 1}")
        if i != j:
            adj[i].add(j)
            adj[j].add(i)
    return Gosd(p, tuple(np.array(sorted(a), dtype=np.int64) for a in adj), delta)


def build_gosd(sp, delta: float = None) -> Gosd:
    """Threshold the filtered pair at ``delta`` (defaults to the pair's own)."""
    delta = sp.delta if delta is None else float(delta)
    if delta < 0:
        raise InvalidParameter("delta must be nonnegative")
    adj = sp.strong_neighbors(delta)
    return Gosd(sp.p, tuple(np.asarray(a, dtype=np.int64) for a in adj), delta)


def enumerate_connected_subgraphs(g: Gosd, m: int) -> List[tuple]:
    """
    All connected node sets of size at most ``m``.

    Uses the ESU scheme: each set is grown from its smallest node, and only
    exclusive neighbors larger than that node are admitted, so every set is
    produced exactly once. Output is sorted by size, then lexicographically.
    """
    if m < 1:
        raise InvalidParameter("m must be at least 1")
    nbrs = [set(map(int, g.neighbors(i))) for i in range(g.p)]
    found = []

    def extend(sub, closed, ext, v):
        found.append(tuple(sorted(sub)))
        if len(sub) == m:
            return
        ext = list(ext)
        while ext:
            w = ext.pop()
            fresh = [u for u in nbrs[w] if u > v and u not in closed]
            extend(sub + [w], closed | nbrs[w] | {w}, ext + fresh, v)

    for v in range(g.p):
        ext = [u for u in nbrs[v] if u > v]
        extend([v], nbrs[v] | {v}, ext, v)

    found.sort(key=lambda s: (len(s), s))
    return found


def build_expanded_graph(g: Gosd, l_pe: int) -> Gosd:
    """The expanded graph with window radius ``l_pe``."""
    if l_pe < 0:
        raise InvalidParameter("l_pe must be nonnegative")
    if g.radius != 0:
        raise InvalidParameter("graph is already expanded")
    return Gosd(g.p, g.adjacency, g.delta, int(l_pe))


def components_of_subset(g: Gosd, nodes) -> List[tuple]:
    """
    Connected components of the subgraph induced by ``nodes``.

    Components are returned as sorted tuples, ordered by smallest member.
    """
    nodes = np.unique(np.asarray(list(nodes), dtype=np.int64))
    if nodes.size == 0:
        return []
    if nodes[0] < 0 or nodes[-1] >= g.p:
        raise InvalidInput("nodes outside the graph")
    parent = np.arange(nodes.size)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, i in enumerate(nodes):
        if g.radius == 0:
            nb = g.adjacency[i]
            pos = np.searchsorted(nodes, nb)
            ok = pos < nodes.size
            hits = pos[ok][nodes[pos[ok]] == nb[ok]]
        else:
            lo, hi = g._intervals(int(i))
            if lo.size == 0:
                continue
            left = np.searchsorted(nodes, lo, side="left")
            right = np.searchsorted(nodes, hi, side="right")
            hits = np.concatenate([np.arange(s, e) for s, e in zip(left, right)])
        for b in hits:
            if b == a:
                continue
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    roots = np.array([find(a) for a in range(nodes.size)])
    comps = {}
    for a, root in enumerate(roots):
        comps.setdefault(root, []).append(int(nodes[a]))
    return [tuple(c) for _, c in sorted(comps.items())]
