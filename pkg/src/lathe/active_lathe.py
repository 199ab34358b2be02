"""Two-phase active structure learning for homogeneous Ising trees.

The global phase spends a data-dependent fraction ``alpha`` of the vector
budget on a Chow-Liu fit and uses the fitted edges to estimate ``rho``. The
local phase finds edges whose adjacent triples fail a correlation-margin test
and spends the remaining budget re-sampling only their endpoints.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import InvalidArgumentError, LedgerViolation
from .estimation import CorrelationAccumulator, LearnedTree, scl_mst
from .tree_model import IsingTreeModel, SampleBlock, SeedLike, TreeTopology, make_rng, _draw_full

# Left-closed breakpoints of the rho-hat bins and the fraction used for each.
ALPHA_BREAKS = (0.02, 0.07, 0.16, 0.34, 0.53, 0.76)
ALPHA_VALUES = (1.0, 0.995, 0.985, 0.95, 0.9, 0.85, 0.8)
ALPHA_SET = frozenset(ALPHA_VALUES)
ALPHA_START = 0.8


def alpha_lookup(rho_hat: float) -> float:
    """Fraction of the vector budget for the global phase given ``rho_hat``.

    Non-positive estimates fall back to a fully passive run (1.0); estimates
    at or above 1 use the last bin (0.8).
    """
    if rho_hat <= 0.0:
        return 1.0
    if rho_hat >= 1.0:
        return 0.8
    return ALPHA_VALUES[bisect.bisect_right(ALPHA_BREAKS, rho_hat)]


def _frac(x: float) -> Fraction:
    return Fraction(x).limit_denominator(10_000)


def floor_alpha_n(alpha: float, n: int) -> int:
    """``floor(alpha * n)`` in exact rational arithmetic."""
    return math.floor(_frac(alpha) * n)


class SamplingOracle(Protocol):
    p: int

    def vectors(self, m: int) -> SampleBlock: ...

    def subvectors(self, nodes: Sequence[int], m: int) -> SampleBlock: ...


class IsingOracle:
    """Draws from an Ising tree model using one sequential random stream."""

    def __init__(self, model: IsingTreeModel, seed: SeedLike = None):
        self.model = model
        self.p = model.p
        self.rng = make_rng(seed)

    def vectors(self, m: int) -> SampleBlock:
        return SampleBlock(tuple(range(self.p)), _draw_full(self.model, m, self.rng))

    def subvectors(self, nodes: Sequence[int], m: int) -> SampleBlock:
        nodes = tuple(sorted(nodes))
        if not nodes:
            raise InvalidArgumentError("node subset must be nonempty")
        full = _draw_full(self.model, m, self.rng)
        return SampleBlock(nodes, np.ascontiguousarray(full[:, nodes]))


@dataclass
class BudgetLedger:
    """Scalar-sample accounting: ``m`` draws of subset ``S`` cost ``m * |S|``."""

    total: int
    spent: int = 0
    log: list[tuple[str, tuple[int, ...], int]] = field(default_factory=list)

    @classmethod
    def for_budget(cls, n: int, p: int) -> "BudgetLedger":
        return cls(total=n * p)

    @property
    def remaining(self) -> int:
        return self.total - self.spent

    def charge(self, stage: str, nodes: Sequence[int], m: int) -> None:
        cost = m * len(nodes)
        if self.spent + cost > self.total:
            raise LedgerViolation(
                f"{stage}: charging {cost} scalars would exceed budget "
                f"({self.spent} of {self.total} spent)"
            )
        self.spent += cost
        self.log.append((stage, tuple(nodes), m))

    def per_node_counts(self, p: int) -> np.ndarray:
        counts = np.zeros(p, dtype=np.int64)
        for _, nodes, m in self.log:
            counts[list(nodes)] += m
        return counts


def _acquire(oracle, ledger: BudgetLedger, acc: CorrelationAccumulator, stage, nodes, m):
    if m <= 0:
        return
    ledger.charge(stage, nodes, m)
    if len(nodes) == oracle.p:
        block = oracle.vectors(m)
    else:
        block = oracle.subvectors(nodes, m)
    acc.accumulate(block)


def estimate_rho(tree: LearnedTree, acc: CorrelationAccumulator) -> float:
    """Mean empirical correlation over the edges of ``tree``."""
    if not tree.edges:
        raise InvalidArgumentError("need at least one edge to estimate rho")
    return float(np.mean([acc.correlation(u, v) for u, v in tree.edges]))


@dataclass
class GlobalPhase:
    tree: LearnedTree
    acc: CorrelationAccumulator
    alpha: float
    rho_hat: float
    ledger: BudgetLedger
    trace: list[tuple[float, float]]


def global_phase(
    oracle: SamplingOracle,
    n: int,
    ledger: BudgetLedger | None = None,
    acc: CorrelationAccumulator | None = None,
) -> GlobalPhase:
    """Iterated Chow-Liu fits while the chosen fraction keeps growing.

    Returns the last fitted tree, its rho estimate, and the fraction whose
    samples were actually acquired. ``trace`` holds ``(alpha_i, rho_hat_i)``
    for each completed iteration.
    """
    p = oracle.p
    if n < 1 or p < 2:
        raise InvalidArgumentError(f"need n >= 1 and p >= 2, got n={n}, p={p}")
    ledger = ledger or BudgetLedger.for_budget(n, p)
    acc = acc or CorrelationAccumulator(p)
    all_nodes = tuple(range(p))
    prev, cur = 0.0, ALPHA_START
    trace: list[tuple[float, float]] = []
    while cur > prev:
        m = floor_alpha_n(cur, n) - floor_alpha_n(prev, n)
        _acquire(oracle, ledger, acc, f"global-{len(trace) + 1}", all_nodes, m)
        tree = scl_mst(acc)
        rho_hat = estimate_rho(tree, acc)
        trace.append((cur, rho_hat))
        prev, cur = cur, alpha_lookup(rho_hat)
    return GlobalPhase(tree, acc, prev, rho_hat, ledger, trace)


def confidence_factor(rho_hat: float) -> float:
    return (11.0 + 9.0 * rho_hat) / 20.0


def confident_event(acc: CorrelationAccumulator, i: int, j: int, k: int, rho_hat: float) -> bool:
    """Margin test certifying the path ``i - j - k`` (``j`` in the middle)."""
    r_ik = acc.correlation(i, k)
    f = confidence_factor(rho_hat)
    return r_ik <= acc.correlation(i, j) * f and r_ik <= acc.correlation(j, k) * f


@dataclass(frozen=True)
class ConfidenceSets:
    confident_edges: frozenset[tuple[int, int]]
    unconfident_edges: frozenset[tuple[int, int]]
    unconfident_nodes: frozenset[int]

    @property
    def p_tilde(self) -> int:
        return len(self.unconfident_nodes)


def _edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


def classify_confidence(
    tree: LearnedTree, acc: CorrelationAccumulator, rho_hat: float
) -> ConfidenceSets:
    """Split tree edges by whether every adjacent-edge triple passes the margin test."""
    nbrs: dict[int, list[int]] = {u: [] for u in tree.nodes}
    for u, v in tree.edges:
        nbrs[u].append(v)
        nbrs[v].append(u)
    unconf: set[tuple[int, int]] = set()
    f = confidence_factor(rho_hat)
    sums, counts = acc.sums, acc.counts
    for j, nb in nbrs.items():
        if len(nb) < 2:
            continue
        nb = sorted(nb)
        for a in range(len(nb)):
            i = nb[a]
            r_ij = sums[i, j] / counts[i, j]
            for b in range(a + 1, len(nb)):
                k = nb[b]
                r_ik = sums[i, k] / counts[i, k]
                r_jk = sums[j, k] / counts[j, k]
                if not (r_ik <= r_ij * f and r_ik <= r_jk * f):
                    unconf.add(_edge(i, j))
                    unconf.add(_edge(j, k))
    edges = frozenset(_edge(u, v) for u, v in tree.edges)
    nodes = frozenset(x for e in unconf for x in e)
    return ConfidenceSets(edges - unconf, frozenset(unconf), nodes)


def _components(nodes, edges) -> list[list[int]]:
    parent = {u: u for u in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        parent[find(u)] = find(v)
    groups: dict[int, list[int]] = {}
    for u in sorted(nodes):
        groups.setdefault(find(u), []).append(u)
    return sorted(groups.values())


def refinement_sample_count(alpha: float, n: int, p: int, p_tilde: int) -> int:
    """``floor((1 - alpha) * n * p / p_tilde)`` in exact arithmetic."""
    return math.floor((1 - _frac(alpha)) * n * p / p_tilde)


def local_refinement(
    oracle: SamplingOracle,
    tree: LearnedTree,
    conf: ConfidenceSets,
    acc: CorrelationAccumulator,
    alpha: float,
    n: int,
    ledger: BudgetLedger,
) -> TreeTopology:
    """Re-sample unconfident nodes and relearn each unconfident component."""
    p = oracle.p
    if conf.p_tilde == 0 or alpha >= 1.0:
        return TreeTopology(p, tree.edges)
    assert conf.p_tilde >= 2, "unconfident nodes always come in edge pairs"
    nodes = tuple(sorted(conf.unconfident_nodes))
    m = refinement_sample_count(alpha, n, p, conf.p_tilde)
    _acquire(oracle, ledger, acc, "refine", nodes, m)
    kept = set(_edge(u, v) for u, v in tree.edges) - conf.unconfident_edges
    for comp in _components(nodes, conf.unconfident_edges):
        kept.update(scl_mst(acc, comp).edges)
    return TreeTopology(p, kept)


@dataclass
class ActiveResult:
    tree: TreeTopology
    global_tree: LearnedTree
    trace: list[tuple[float, float]]
    alpha: float
    rho_hat: float
    confidence: ConfidenceSets
    node_counts: np.ndarray
    ledger: BudgetLedger

    @property
    def p_tilde(self) -> int:
        return self.confidence.p_tilde


def active_lathe(
    oracle: SamplingOracle,
    n: int,
    classify: Callable[[LearnedTree, CorrelationAccumulator, float], ConfidenceSets] = classify_confidence,
) -> ActiveResult:
    """Run both phases against ``oracle`` with a budget of ``n * p`` scalar samples.

    ``classify`` is exposed so tests can substitute a stub confidence rule.
    """
    p = oracle.p
    g = global_phase(oracle, n)
    conf = classify(g.tree, g.acc, g.rho_hat)
    tree = local_refinement(oracle, g.tree, conf, g.acc, g.alpha, n, g.ledger)
    if g.ledger.spent > g.ledger.total:
        raise LedgerViolation("budget exceeded")
    return ActiveResult(
        tree=tree,
        global_tree=g.tree,
        trace=g.trace,
        alpha=g.alpha,
        rho_hat=g.rho_hat,
        confidence=conf,
        node_counts=g.ledger.per_node_counts(p),
        ledger=g.ledger,
    )
