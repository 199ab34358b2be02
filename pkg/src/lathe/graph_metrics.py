"""Edge distances, edge packings, and t-hop error classification on trees and forests."""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import InvalidArgumentError, TooLargeError
from .tree_model import TreeTopology

Edge = tuple[int, int]


def _edge(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


class Forest:
    """Undirected graph given by nodes and edges; used for induced subgraphs of trees."""

    def __init__(self, nodes: Iterable[int], edges: Iterable[Sequence[int]]):
        self.nodes = frozenset(int(u) for u in nodes)
        self.edges = frozenset(_edge(int(u), int(v)) for u, v in edges)
        self.adj: dict[int, list[int]] = {u: [] for u in self.nodes}
        for u, v in self.edges:
            if u not in self.adj or v not in self.adj:
                raise InvalidArgumentError(f"edge ({u}, {v}) has an endpoint outside the node set")
            self.adj[u].append(v)
            self.adj[v].append(u)
        for nb in self.adj.values():
            nb.sort()

    @classmethod
    def of(cls, g: "Forest | TreeTopology") -> "Forest":
        if isinstance(g, Forest):
            return g
        return cls(range(g.p), g.edges)

    def induced(self, nodes: Iterable[int]) -> "Forest":
        keep = set(nodes) & self.nodes
        return Forest(keep, [e for e in self.edges if e[0] in keep and e[1] in keep])

    @property
    def max_degree(self) -> int:
        return max((len(nb) for nb in self.adj.values()), default=0)

    def distances(self, sources: Iterable[int]) -> dict[int, int]:
        """Multi-source BFS hop counts; unreachable nodes are absent."""
        dist = {}
        queue = deque()
        for s in sources:
            if s not in self.adj:
                raise InvalidArgumentError(f"unknown node {s}")
            dist[s] = 0
            queue.append(s)
        while queue:
            u = queue.popleft()
            for w in self.adj[u]:
                if w not in dist:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist

    def components(self) -> list[list[int]]:
        seen: set[int] = set()
        out = []
        for s in sorted(self.nodes):
            if s in seen:
                continue
            comp = sorted(self.distances([s]))
            seen.update(comp)
            out.append(comp)
        return out


def edge_geodesic_predistance(g, e: Sequence[int], e2: Sequence[int]) -> float:
    """Fewest edges on a path from an endpoint of ``e`` to an endpoint of ``e2``; ``inf`` if none."""
    f = Forest.of(g)
    for u in (*e, *e2):
        if u not in f.adj:
            raise InvalidArgumentError(f"unknown node {u}")
    dist = f.distances(e)
    reach = [dist[v] for v in e2 if v in dist]
    return min(reach) if reach else math.inf


@dataclass(frozen=True)
class PackingResult:
    selected: tuple[Edge, ...]
    r: int
    trace: tuple[tuple[Edge, tuple[Edge, ...]], ...] = field(default=(), repr=False)

    @property
    def size(self) -> int:
        return len(self.selected)


def greedy_2packing(g, collection: Iterable[Sequence[int]]) -> PackingResult:
    """Greedy 2-packing: take the edge at the deepest node, drop everything within distance 1.

    Each component is rooted at its smallest node id; depth ties go to the
    smaller node id. ``trace`` records each pick and the edges it removed.
    """
    f = Forest.of(g)
    remaining = {_edge(int(u), int(v)) for u, v in collection}
    extra = remaining - f.edges
    if extra:
        raise InvalidArgumentError(f"edges not in the graph: {sorted(extra)}")
    depth: dict[int, int] = {}
    for comp in f.components():
        depth.update(f.distances([comp[0]]))
    selected: list[Edge] = []
    trace = []
    while remaining:
        # deepest endpoint, smaller id on ties; then smaller edge
        best = min(
            remaining,
            key=lambda e: min((-depth[x], x) for x in e) + e,
        )
        dist = f.distances(best)
        removed = tuple(sorted(e for e in remaining if min(dist.get(e[0], 2), dist.get(e[1], 2)) <= 1))
        remaining.difference_update(removed)
        selected.append(best)
        trace.append((best, removed))
    return PackingResult(tuple(selected), 2, tuple(trace))


MAX_BRUTEFORCE = 20


def packing_number_bruteforce(collection: Iterable[Sequence[int]], g, r: int) -> int:
    """Exact largest subset of ``collection`` with pairwise pre-distance >= ``r``."""
    f = Forest.of(g)
    edges = sorted({_edge(int(u), int(v)) for u, v in collection})
    if len(edges) > MAX_BRUTEFORCE:
        raise TooLargeError(f"brute force limited to {MAX_BRUTEFORCE} edges, got {len(edges)}")
    k = len(edges)
    conflict = [0] * k
    for a in range(k):
        dist = f.distances(edges[a])
        for b in range(k):
            if a == b:
                continue
            reach = [dist[v] for v in edges[b] if v in dist]
            if reach and min(reach) < r:
                conflict[a] |= 1 << b

    best = 0

    def search(candidates: int, size: int) -> None:
        nonlocal best
        if size + bin(candidates).count("1") <= best:
            return
        if not candidates:
            best = max(best, size)
            return
        a = (candidates & -candidates).bit_length() - 1
        search(candidates & ~conflict[a] & ~(1 << a), size + 1)
        search(candidates & ~(1 << a), size)

    search((1 << k) - 1, 0)
    return best


@dataclass(frozen=True)
class HopErrorHistogram:
    counts: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def t_hop_classify(learned: TreeTopology, truth: TreeTopology) -> HopErrorHistogram:
    """Bucket each spurious learned edge by the true-tree distance between its endpoints."""
    if learned.p != truth.p:
        raise InvalidArgumentError(f"node sets differ: {learned.p} vs {truth.p} nodes")
    wrong = learned.edge_set - truth.edge_set
    hist: Counter[int] = Counter()
    for u, v in sorted(wrong):
        hist[truth.path_length(u, v)] += 1
    return HopErrorHistogram(dict(sorted(hist.items())))


def unconfident_packing(truth: TreeTopology, unconfident_nodes: Iterable[int]) -> tuple[int, bool, int]:
    """Greedy 2-packing of the true tree induced on the unconfident nodes.

    Returns ``(packing size summed over components, any isolated node,
    number of nodes)``. Without isolated nodes, size <= 12 forces fewer than
    26 d unconfident nodes.
    """
    sub = Forest.of(truth).induced(unconfident_nodes)
    isolated = any(not sub.adj[u] for u in sub.nodes)
    size = greedy_2packing(sub, sub.edges).size
    return size, isolated, len(sub.nodes)
