"""Two-phase active learner: alpha schedule, confidence sets, refinement, budget."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lathe.active_lathe import (
    ALPHA_SET,
    BudgetLedger,
    ConfidenceSets,
    IsingOracle,
    _acquire,
    active_lathe,
    alpha_lookup,
    classify_confidence,
    confident_event,
    estimate_rho,
    floor_alpha_n,
    global_phase,
    local_refinement,
    refinement_sample_count,
)
from lathe.errors import InvalidArgumentError, LedgerViolation, NoDataError
from lathe.estimation import CorrelationAccumulator, LearnedTree, scl_mst
from lathe.tree_model import (
    IsingTreeModel,
    SampleBlock,
    build_binary_tree,
    build_chain,
    build_hmm,
    build_random_tree,
)


def synthetic_acc(corr: dict, p: int, count: int = 1000) -> CorrelationAccumulator:
    """Accumulator whose pairs read back exactly the given correlations."""
    acc = CorrelationAccumulator(p)
    for (u, v), r in corr.items():
        s = round(r * count)
        acc.sums[u, v] = acc.sums[v, u] = s
        acc.counts[u, v] = acc.counts[v, u] = count
    return acc


class ScriptedOracle:
    """Two-node oracle replaying fixed blocks; each block is (agreeing, disagreeing) rows."""

    def __init__(self, blocks):
        self.p = 2
        self.blocks = list(blocks)
        self.requests = []

    def vectors(self, m):
        agree, disagree = self.blocks.pop(0)
        assert agree + disagree == m
        self.requests.append(m)
        rows = [[1, 1]] * agree + [[1, -1]] * disagree
        return SampleBlock((0, 1), np.array(rows, dtype=np.int8).reshape(m, 2))

    def subvectors(self, nodes, m):
        raise AssertionError("two-node runs never refine")


class TestAlphaTable:
    @pytest.mark.parametrize(
        "rho_hat, alpha",
        [(0.9, 0.8), (0.34, 0.9), (-0.1, 1.0), (0.0, 1.0), (0.01, 1.0), (0.02, 0.995),
         (0.0699, 0.995), (0.07, 0.985), (0.16, 0.95), (0.53, 0.85), (0.76, 0.8), (1.0, 0.8), (1.3, 0.8)],
    )
    def test_values(self, rho_hat, alpha):
        assert alpha_lookup(rho_hat) == alpha

    @given(st.floats(-2, 2), st.floats(-2, 2))
    def test_non_increasing(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert alpha_lookup(lo) >= alpha_lookup(hi)
        assert alpha_lookup(a) in ALPHA_SET

    def test_floor_is_exact(self):
        # naive float evaluation gives 19.999...
        assert math.floor((1 - 0.8) * 3 * 100 / 3) == 19
        assert refinement_sample_count(0.8, 3, 100, 3) == 20
        assert floor_alpha_n(0.95, 1000) == 950
        assert floor_alpha_n(0.8, 999) == 799
        assert refinement_sample_count(0.8, 1000, 100, 3) == 6666


class TestEstimateRho:
    def test_mean_of_edges(self):
        acc = synthetic_acc({(0, 1): 0.6, (1, 2): 0.8, (0, 2): 0.1}, 3)
        tree = LearnedTree((0, 1, 2), ((0, 1), (1, 2)), (0.6, 0.8))
        assert estimate_rho(tree, acc) == pytest.approx(0.7)

    def test_no_data(self):
        acc = synthetic_acc({(0, 1): 0.6}, 3)
        with pytest.raises(NoDataError):
            estimate_rho(LearnedTree((0, 1, 2), ((0, 1), (1, 2)), (0.6, 0.8)), acc)

    def test_chain_concentrates(self):
        model = IsingTreeModel(build_chain(100), 0.9)
        acc = CorrelationAccumulator(100).accumulate(IsingOracle(model, 1).vectors(10_000))
        assert estimate_rho(scl_mst(acc), acc) == pytest.approx(0.9, abs=0.01)


class TestGlobalPhase:
    def test_scripted_schedule(self):
        # 0.4 -> alpha 0.9; (320 - 100) / 900 -> 0.95; (220 + 50) / 950 -> 0.95, stop
        oracle = ScriptedOracle([(560, 240), (0, 100), (50, 0)])
        g = global_phase(oracle, 1000)
        assert [a for a, _ in g.trace] == [0.8, 0.9, 0.95]
        assert g.trace[0][1] == pytest.approx(0.4)
        assert g.trace[1][1] == pytest.approx(220 / 900)
        assert g.alpha == 0.95 and g.rho_hat == pytest.approx(270 / 950)
        assert oracle.requests == [800, 100, 50]
        assert g.ledger.spent == 2 * 950

    def test_full_budget_when_uncorrelated(self):
        oracle = ScriptedOracle([(400, 400), (150, 50)])
        g = global_phase(oracle, 1000)
        assert g.alpha == 1.0
        assert g.ledger.spent == g.ledger.total == 2000

    def test_single_iteration_at_high_correlation(self):
        model = IsingTreeModel(build_chain(50), 0.9)
        g = global_phase(IsingOracle(model, 3), 400)
        assert len(g.trace) == 1 and g.alpha == 0.8
        assert g.ledger.spent == 320 * 50

    def test_bad_sizes(self):
        with pytest.raises(InvalidArgumentError):
            global_phase(ScriptedOracle([]), 0)


class TestConfidence:
    def test_exact_correlations_pass(self):
        acc = synthetic_acc({(0, 1): 0.9, (1, 2): 0.9, (0, 2): 0.81}, 3, count=10_000)
        assert confident_event(acc, 0, 1, 2, 0.9)

    def test_equal_correlations_fail(self):
        acc = synthetic_acc({(0, 1): 0.5, (1, 2): 0.5, (0, 2): 0.5}, 3)
        assert not confident_event(acc, 0, 1, 2, 0.5)

    def test_zero_outer_correlation_passes(self):
        acc = synthetic_acc({(0, 1): 0.3, (1, 2): 0.2, (0, 2): 0.0}, 3)
        assert confident_event(acc, 0, 1, 2, 0.3)

    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1))
    def test_outer_nodes_symmetric(self, rij, rjk, rik, rho_hat):
        acc = synthetic_acc({(0, 1): rij, (1, 2): rjk, (0, 2): rik}, 3)
        assert confident_event(acc, 0, 1, 2, rho_hat) == confident_event(acc, 2, 1, 0, rho_hat)

    def test_chain_one_failing_triple(self):
        corr = {(0, 1): 0.9, (1, 2): 0.9, (2, 3): 0.9, (0, 2): 0.9, (1, 3): 0.5, (0, 3): 0.4}
        tree = LearnedTree((0, 1, 2, 3), ((0, 1), (1, 2), (2, 3)), (0.9,) * 3)
        conf = classify_confidence(tree, synthetic_acc(corr, 4), 0.9)
        assert conf.unconfident_edges == {(0, 1), (1, 2)}
        assert conf.unconfident_nodes == {0, 1, 2}
        assert conf.confident_edges == {(2, 3)}
        assert conf.p_tilde == 3

    def test_star_one_failing_triple(self):
        corr = {(0, 1): 0.9, (0, 2): 0.9, (0, 3): 0.9, (1, 2): 0.9, (1, 3): 0.5, (2, 3): 0.5}
        tree = LearnedTree((0, 1, 2, 3), ((0, 1), (0, 2), (0, 3)), (0.9,) * 3)
        conf = classify_confidence(tree, synthetic_acc(corr, 4), 0.9)
        assert conf.unconfident_edges == {(0, 1), (0, 2)}
        assert conf.confident_edges == {(0, 3)}

    def test_all_pass(self):
        corr = {(0, 1): 0.9, (1, 2): 0.9, (0, 2): 0.81}
        tree = LearnedTree((0, 1, 2), ((0, 1), (1, 2)), (0.9, 0.9))
        conf = classify_confidence(tree, synthetic_acc(corr, 3), 0.9)
        assert conf.p_tilde == 0 and not conf.unconfident_edges

    @given(st.integers(3, 25), st.integers(0, 2**32), st.floats(0.3, 0.95))
    @settings(max_examples=25, deadline=None)
    def test_set_invariants(self, p, seed, rho):
        model = IsingTreeModel(build_random_tree(p, seed), rho)
        acc = CorrelationAccumulator(p).accumulate(IsingOracle(model, seed).vectors(30))
        tree = scl_mst(acc)
        conf = classify_confidence(tree, acc, 0.5)
        assert conf.confident_edges | conf.unconfident_edges == tree.edge_set
        assert not conf.confident_edges & conf.unconfident_edges
        assert conf.unconfident_nodes == {x for e in conf.unconfident_edges for x in e}
        assert conf.p_tilde == 0 or conf.p_tilde >= 2
        for e in conf.confident_edges:
            # every triple through a confident edge passes
            for j in e:
                i = e[0] if j == e[1] else e[1]
                for f in tree.edges:
                    if j in f and f != e:
                        k = f[0] if f[1] == j else f[1]
                        assert confident_event(acc, i, j, k, 0.5)


class TestRefinement:
    def _setup(self, alpha=0.8, n=1000, p=100):
        model = IsingTreeModel(build_chain(p), 0.9)
        oracle = IsingOracle(model, 12)
        ledger = BudgetLedger.for_budget(n, p)
        acc = CorrelationAccumulator(p)
        _acquire(oracle, ledger, acc, "global", tuple(range(p)), floor_alpha_n(alpha, n))
        return oracle, ledger, acc, scl_mst(acc)

    def test_sample_counts(self):
        oracle, ledger, acc, tree = self._setup()
        edges = frozenset({(10, 11), (11, 12)})
        conf = ConfidenceSets(tree.edge_set - edges, edges, frozenset({10, 11, 12}))
        out = local_refinement(oracle, tree, conf, acc, 0.8, 1000, ledger)
        assert ledger.log[-1] == ("refine", (10, 11, 12), 6666)
        counts = ledger.per_node_counts(100)
        assert counts[10] == counts[11] == counts[12] == 7466
        assert counts[0] == 800
        assert 7466 >= (3 - 2 * 0.8) * 1000
        assert acc.counts[10, 12] == 7466
        assert len(out.edges) == 99
        assert ledger.spent <= ledger.total

    def test_no_unconfident_nodes(self):
        oracle, ledger, acc, tree = self._setup()
        conf = ConfidenceSets(tree.edge_set, frozenset(), frozenset())
        spent = ledger.spent
        out = local_refinement(oracle, tree, conf, acc, 0.8, 1000, ledger)
        assert out.edge_set == tree.edge_set and ledger.spent == spent

    def test_idempotent_replacement(self):
        oracle, ledger, acc, tree = self._setup()
        chosen = frozenset(e for e in tree.edges if 30 <= e[0] < 35)
        nodes = frozenset(x for e in chosen for x in e)
        conf = ConfidenceSets(tree.edge_set - chosen, chosen, nodes)
        out = local_refinement(oracle, tree, conf, acc, 0.8, 1000, ledger)
        assert out.edge_set == tree.edge_set

    def test_overdraw_raises(self):
        ledger = BudgetLedger.for_budget(10, 3)
        ledger.charge("a", (0, 1, 2), 10)
        with pytest.raises(LedgerViolation):
            ledger.charge("b", (0,), 1)


class TestActiveLathe:
    @given(
        st.sampled_from(["chain", "hmm", "binary", "random"]),
        st.floats(0.05, 0.95),
        st.integers(5, 300),
        st.integers(0, 2**32),
    )
    @settings(max_examples=40, deadline=None)
    def test_budget_and_structure(self, kind, rho, n, seed):
        truth = {
            "chain": build_chain(40),
            "hmm": build_hmm(40),
            "binary": build_binary_tree(5),
            "random": build_random_tree(40, seed),
        }[kind]
        res = active_lathe(IsingOracle(IsingTreeModel(truth, rho), seed), n)
        p = truth.p
        assert res.ledger.spent <= n * p
        assert len(res.tree.edges) == p - 1
        assert 1 <= len(res.trace) <= 7
        alphas = [a for a, _ in res.trace]
        assert all(a < b for a, b in zip(alphas, alphas[1:]))
        assert res.alpha == alphas[-1] and res.alpha in ALPHA_SET
        assert res.node_counts.sum() == res.ledger.spent
        if res.p_tilde and res.alpha < 1:
            extra = refinement_sample_count(res.alpha, n, p, res.p_tilde)
            for u in res.confidence.unconfident_nodes:
                assert res.node_counts[u] == floor_alpha_n(res.alpha, n) + extra

    @given(st.integers(0, 2**32), st.integers(60, 400))
    @settings(max_examples=25, deadline=None)
    def test_unconfident_sample_floor(self, seed, n):
        truth = build_chain(200)
        res = active_lathe(IsingOracle(IsingTreeModel(truth, 0.8), seed), n)
        d = truth.max_degree
        if 0 < res.p_tilde < 26 * d:
            for u in res.confidence.unconfident_nodes:
                assert res.node_counts[u] >= (3 - 2 * res.alpha) * n

    @given(st.sampled_from(sorted(ALPHA_SET - {1.0})), st.integers(1, 10_000), st.integers(2, 51))
    def test_unconfident_floor_arithmetic(self, alpha, n, p_tilde):
        p = 200
        a = Fraction(alpha).limit_denominator(1000)
        assert (a + (1 - a) * Fraction(p, p_tilde)) * n >= (3 - 2 * a) * n
        # each of the two floors forfeits less than one sample
        total = floor_alpha_n(alpha, n) + refinement_sample_count(alpha, n, p, p_tilde)
        assert total > (3 - 2 * a) * n - 2

    def test_all_pass_stub_is_global_scl(self):
        model = IsingTreeModel(build_hmm(60), 0.9)

        def all_pass(tree, acc, rho_hat):
            return ConfidenceSets(tree.edge_set, frozenset(), frozenset())

        res = active_lathe(IsingOracle(model, 5), 300, classify=all_pass)
        assert len(res.trace) == 1
        block = IsingOracle(model, 5).vectors(240)
        expected = scl_mst(CorrelationAccumulator(60).accumulate(block))
        assert res.tree.edge_set == expected.edge_set
        assert res.ledger.spent == 240 * 60

    def test_deterministic(self):
        model = IsingTreeModel(build_chain(100), 0.9)
        a = active_lathe(IsingOracle(model, 77), 500)
        b = active_lathe(IsingOracle(model, 77), 500)
        assert a.tree == b.tree and a.trace == b.trace
        np.testing.assert_array_equal(a.node_counts, b.node_counts)

    def test_weak_correlation_is_passive(self):
        model = IsingTreeModel(build_chain(5), 0.01)
        res = active_lathe(IsingOracle(model, 1), 100_000)
        assert res.alpha == 1.0
        assert res.ledger.spent == 100_000 * 5
        assert res.tree.edge_set == res.global_tree.edge_set
