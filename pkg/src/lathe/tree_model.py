"""Tree topologies and the homogeneous zero-field Ising tree distribution.

Samples are drawn exactly by ancestral sampling from node 0: the root is a
fair coin and every child copies its parent, flipped with probability
``theta = (1 - rho) / 2``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import InvalidArgumentError, InvalidSizeError

SeedLike = int | np.random.SeedSequence | np.random.Generator | None


def make_rng(seed: SeedLike, *stream: int) -> np.random.Generator:
    """Generator for ``stream`` under master ``seed``.

    The same ``(seed, *stream)`` always yields the same bit stream; distinct
    stream ids give statistically independent streams.
    """
    if isinstance(seed, np.random.Generator):
        if stream:
            raise InvalidArgumentError("stream ids need an integer or SeedSequence seed")
        return seed
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + stream)
    else:
        ss = np.random.SeedSequence(seed, spawn_key=stream)
    return np.random.Generator(np.random.PCG64(ss))


def _norm_edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class TreeTopology:
    """Undirected tree on nodes ``0..p-1``.

    Edges are stored as sorted ``(min, max)`` pairs in sorted order, so two
    topologies with the same edge set compare equal.
    """

    p: int
    edges: tuple[tuple[int, int], ...]

    def __init__(self, p: int, edges: Iterable[Sequence[int]]):
        p = int(p)
        if p < 1:
            raise InvalidSizeError(f"a tree needs at least one node, got p={p}")
        norm = []
        for e in edges:
            u, v = int(e[0]), int(e[1])
            if u == v:
                raise InvalidArgumentError(f"self-loop at node {u}")
            if not (0 <= u < p and 0 <= v < p):
                raise InvalidArgumentError(f"edge ({u}, {v}) outside node range 0..{p - 1}")
            norm.append(_norm_edge(u, v))
        norm.sort()
        if len(set(norm)) != len(norm):
            raise InvalidArgumentError("duplicate edge")
        if len(norm) != p - 1:
            raise InvalidArgumentError(f"a tree on {p} nodes has {p - 1} edges, got {len(norm)}")
        parent = list(range(p))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for u, v in norm:
            ru, rv = find(u), find(v)
            if ru == rv:
                raise InvalidArgumentError(f"edge ({u}, {v}) closes a cycle")
            parent[ru] = rv
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "edges", tuple(norm))

    @cached_property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.edges)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.p)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return tuple(tuple(sorted(a)) for a in adj)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=int)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.p > 1 else 0

    def satisfies_size_assumption(self) -> bool:
        """True when ``p >= 82 d`` (needed by the active-learning guarantee)."""
        return self.p >= 82 * self.max_degree

    @cached_property
    def bfs_order(self) -> tuple[np.ndarray, np.ndarray]:
        """(order, parent) of a BFS from node 0; ``parent[0] == -1``."""
        order = np.empty(self.p, dtype=np.intp)
        parent = np.full(self.p, -1, dtype=np.intp)
        seen = np.zeros(self.p, dtype=bool)
        seen[0] = True
        queue = deque([0])
        k = 0
        while queue:
            u = queue.popleft()
            order[k] = u
            k += 1
            for w in self.adjacency[u]:
                if not seen[w]:
                    seen[w] = True
                    parent[w] = u
                    queue.append(w)
        return order, parent

    def distances_from(self, source: int) -> np.ndarray:
        dist = np.full(self.p, -1, dtype=int)
        dist[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for w in self.adjacency[u]:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        return np.stack([self.distances_from(s) for s in range(self.p)])

    def path_length(self, u: int, v: int) -> int:
        self._check_node(u)
        self._check_node(v)
        return int(self.distances_from(u)[v])

    def _check_node(self, u: int) -> None:
        if not 0 <= u < self.p:
            raise InvalidArgumentError(f"node {u} outside 0..{self.p - 1}")

    def to_edgelist(self) -> str:
        lines = [f"p={self.p}"] + [f"{u} {v}" for u, v in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist(cls, text: str) -> "TreeTopology":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("p="):
            raise InvalidArgumentError("edge list must start with a 'p=<count>' header")
        p = int(lines[0][2:])
        edges = []
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != 2:
                raise InvalidArgumentError(f"malformed edge line: {ln!r}")
            edges.append((int(parts[0]), int(parts[1])))
        return cls(p, edges)


def build_chain(p: int) -> TreeTopology:
    if p < 2:
        raise InvalidSizeError(f"chain needs p >= 2, got {p}")
    return TreeTopology(p, [(i, i + 1) for i in range(p - 1)])


def build_hmm(p: int) -> TreeTopology:
    """Backbone chain over ``0..p/2-1`` with leaf ``p/2 + i`` hanging off node ``i``."""
    if p < 4 or p % 2:
        raise InvalidSizeError(f"HMM tree needs an even p >= 4, got {p}")
    half = p // 2
    edges = [(i, i + 1) for i in range(half - 1)]
    edges += [(i, half + i) for i in range(half)]
    return TreeTopology(p, edges)


def build_binary_tree(levels: int) -> TreeTopology:
    """Complete binary tree with ``2**levels - 1`` nodes; node k has children 2k+1, 2k+2."""
    if levels < 1:
        raise InvalidSizeError(f"binary tree needs levels >= 1, got {levels}")
    p = 2**levels - 1
    edges = [(k, c) for k in range(p) for c in (2 * k + 1, 2 * k + 2) if c < p]
    return TreeTopology(p, edges)


def build_random_tree(p: int, seed: SeedLike = None) -> TreeTopology:
    """Uniform random labeled tree via a random Pruefer sequence."""
    if p < 2:
        raise InvalidSizeError(f"random tree needs p >= 2, got {p}")
    if p == 2:
        return TreeTopology(2, [(0, 1)])
    rng = make_rng(seed)
    seq = rng.integers(0, p, size=p - 2).tolist()
    return TreeTopology(p, nx.from_prufer_sequence(seq).edges())


@dataclass(frozen=True)
class IsingTreeModel:
    topology: TreeTopology
    rho: float

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise InvalidArgumentError(f"rho must lie in (0, 1), got {self.rho}")

    @property
    def theta(self) -> float:
        return (1.0 - self.rho) / 2.0

    @property
    def p(self) -> int:
        return self.topology.p


@dataclass(frozen=True)
class SampleBlock:
    """``m`` draws (rows) over ``nodes`` (columns), entries in {+1, -1}."""

    nodes: tuple[int, ...]
    data: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return int(self.data.shape[0])


def _draw_full(model: IsingTreeModel, m: int, rng: np.random.Generator) -> np.ndarray:
    order, parent = model.topology.bfs_order
    p = model.p
    x = np.empty((p, m), dtype=np.int8)
    x[0] = 1 - 2 * rng.integers(0, 2, size=m, dtype=np.int8)
    if p > 1:
        signs = 1 - 2 * (rng.random((p - 1, m)) < model.theta).astype(np.int8)
        for k in range(1, p):
            v = order[k]
            np.multiply(x[parent[v]], signs[k - 1], out=x[v])
    return x.T


def sample_vectors(model: IsingTreeModel, m: int, seed: SeedLike = None) -> SampleBlock:
    if m < 0:
        raise InvalidArgumentError(f"sample count must be non-negative, got {m}")
    rng = make_rng(seed)
    return SampleBlock(tuple(range(model.p)), _draw_full(model, m, rng))


def sample_subvector(
    model: IsingTreeModel, nodes: Iterable[int], m: int, seed: SeedLike = None
) -> SampleBlock:
    """Draws from the exact marginal on ``nodes`` (full draw, then projection)."""
    nodes = tuple(sorted(set(int(u) for u in nodes)))
    if not nodes:
        raise InvalidArgumentError("node subset must be nonempty")
    for u in nodes:
        model.topology._check_node(u)
    full = sample_vectors(model, m, seed)
    return SampleBlock(nodes, np.ascontiguousarray(full.data[:, nodes]))


def exact_correlation(model: IsingTreeModel, u: int, v: int) -> float:
    if u == v:
        raise InvalidArgumentError("correlation needs two distinct nodes")
    return model.rho ** model.topology.path_length(u, v)
