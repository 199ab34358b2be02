"""Empirical pairwise correlations and maximum-weight spanning trees."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NoDataError
from .tree_model import SampleBlock, TreeTopology


class CorrelationAccumulator:
    """Running integer sums of ``x_u * x_v`` and joint sample counts per node pair.

    Sums and counts are exact integers; division happens only when a
    correlation is read. Diagonal entries are unused.
    """

    def __init__(self, p: int):
        if p < 1:
            raise InvalidArgumentError(f"need at least one node, got p={p}")
        self.p = p
        self.sums = np.zeros((p, p), dtype=np.int64)
        self.counts = np.zeros((p, p), dtype=np.int64)

    def accumulate(self, block: SampleBlock) -> "CorrelationAccumulator":
        idx = np.asarray(block.nodes, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= self.p):
            raise InvalidArgumentError(f"block nodes outside 0..{self.p - 1}")
        if block.m == 0:
            return self
        x = block.data.astype(np.float64)
        # float64 products are exact for |sum| < 2**53
        gram = np.rint(x.T @ x).astype(np.int64)
        if idx.size == self.p and np.array_equal(idx, np.arange(self.p)):
            self.sums += gram
            self.counts += block.m
        else:
            ix = np.ix_(idx, idx)
            self.sums[ix] += gram
            self.counts[ix] += block.m
        return self

    def merge(self, other: "CorrelationAccumulator") -> "CorrelationAccumulator":
        if other.p != self.p:
            raise InvalidArgumentError("cannot merge accumulators over different node sets")
        out = CorrelationAccumulator(self.p)
        out.sums = self.sums + other.sums
        out.counts = self.counts + other.counts
        return out

    def copy(self) -> "CorrelationAccumulator":
        out = CorrelationAccumulator(self.p)
        out.sums = self.sums.copy()
        out.counts = self.counts.copy()
        return out

    def correlation(self, u: int, v: int) -> float:
        c = self.counts[u, v]
        if c == 0:
            raise NoDataError(f"pair ({u}, {v}) has no joint samples")
        return float(self.sums[u, v] / c)

    def correlation_matrix(self, nodes: Sequence[int]) -> np.ndarray:
        idx = np.asarray(nodes, dtype=np.intp)
        ix = np.ix_(idx, idx)
        counts = self.counts[ix]
        off = ~np.eye(len(idx), dtype=bool)
        if np.any(counts[off] == 0):
            i, j = np.argwhere((counts == 0) & off)[0]
            raise NoDataError(f"pair ({idx[i]}, {idx[j]}) has no joint samples")
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.sums[ix] / counts


def accumulate(acc: CorrelationAccumulator, block: SampleBlock) -> CorrelationAccumulator:
    return acc.accumulate(block)


def empirical_correlation(acc: CorrelationAccumulator, u: int, v: int) -> float:
    return acc.correlation(u, v)


@dataclass(frozen=True)
class LearnedTree:
    """A spanning tree over ``nodes`` together with the weight of each chosen edge."""

    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]

    def topology(self) -> TreeTopology:
        if self.nodes != tuple(range(len(self.nodes))):
            raise InvalidArgumentError("only trees over 0..p-1 convert to a TreeTopology")
        return TreeTopology(len(self.nodes), self.edges)

    @property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.edges)


def max_spanning_tree(nodes: Sequence[int], weights: np.ndarray) -> LearnedTree:
    """Kruskal on the complete graph over ``nodes`` with symmetric ``weights``.

    Candidate edges are scanned by decreasing weight, ties broken by the
    lexicographic ``(min id, max id)`` order of the edge.
    """
    nodes = tuple(int(u) for u in nodes)
    k = len(nodes)
    if k <= 1:
        return LearnedTree(nodes, (), ())
    order_ids = np.argsort(nodes, kind="stable")
    nodes_sorted = np.asarray(nodes)[order_ids]
    w = np.asarray(weights)[np.ix_(order_ids, order_ids)]
    iu, ju = np.triu_indices(k, 1)
    wv = w[iu, ju]
    # lexsort: last key is primary
    perm = np.lexsort((ju, iu, -wv))
    parent = list(range(k))
    chosen: list[tuple[int, int]] = []
    chosen_w: list[float] = []
    for e in perm.tolist():
        a, b = int(iu[e]), int(ju[e])
        ra = a
        while parent[ra] != ra:
            parent[ra] = parent[parent[ra]]
            ra = parent[ra]
        rb = b
        while parent[rb] != rb:
            parent[rb] = parent[parent[rb]]
            rb = parent[rb]
        if ra == rb:
            continue
        parent[ra] = rb
        chosen.append((int(nodes_sorted[a]), int(nodes_sorted[b])))
        chosen_w.append(float(wv[e]))
        if len(chosen) == k - 1:
            break
    return LearnedTree(tuple(int(u) for u in nodes_sorted), tuple(chosen), tuple(chosen_w))


def scl_mst(acc: CorrelationAccumulator, nodes: Iterable[int] | None = None) -> LearnedTree:
    """Maximum spanning tree over ``nodes`` weighted by empirical correlations."""
    nodes = tuple(range(acc.p)) if nodes is None else tuple(sorted(set(int(u) for u in nodes)))
    return max_spanning_tree(nodes, acc.correlation_matrix(nodes))


def empirical_mutual_information(block: SampleBlock) -> np.ndarray:
    """Plug-in pairwise mutual information (nats) from vector samples.

    Each pairwise joint on {+1,-1}^2 is recovered from the node means and the
    pair correlation; empty cells contribute zero.
    """
    x = block.data.astype(np.float64)
    m = x.shape[0]
    mean = x.mean(axis=0)
    corr = (x.T @ x) / m
    mu = mean[:, None]
    mv = mean[None, :]
    total = np.zeros_like(corr)
    for su in (1.0, -1.0):
        pu = (1.0 + su * mean[:, None]) / 2.0
        for sv in (1.0, -1.0):
            pv = (1.0 + sv * mean[None, :]) / 2.0
            joint = (1.0 + su * mu + sv * mv + su * sv * corr) / 4.0
            joint = np.clip(joint, 0.0, None)
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.where(joint > 0, joint * np.log(joint / (pu * pv)), 0.0)
            total += term
    np.fill_diagonal(total, 0.0)
    return total


def cl_mst_mutual_information(block: SampleBlock) -> LearnedTree:
    """Classical Chow-Liu tree: maximum spanning tree on plug-in mutual information."""
    if block.m == 0:
        raise NoDataError("Chow-Liu needs at least one vector sample")
    return max_spanning_tree(block.nodes, empirical_mutual_information(block))
