import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobigraph.errors import DataError, DimensionError, NumericalError
from mobigraph.graph_core import Permutation, graph_distance, make_graph, permute_graph, validate_graph
from mobigraph.matching import (
    MatchConfig,
    MatchResult,
    brute_force_match,
    faq_match,
    frank_wolfe,
    matching_objective,
    node_cost_matrix,
    pad_with_null_nodes,
    random_doubly_stochastic,
    register,
    relaxed_gradient,
    relaxed_objective,
    solve_lap,
)

from conftest import planted_pair, random_graph


class TestPadding:
    def test_sizes(self, rng):
        g1, g2 = random_graph(3, rng), random_graph(2, rng)
        p1, p2 = pad_with_null_nodes(g1, g2)
        assert p1.n == p2.n == 5
        assert p1.null_mask.sum() == 2 and p2.null_mask.sum() == 3
        np.testing.assert_array_equal(p1.adjacency[:3, :3], g1.adjacency)
        assert np.all(p1.adjacency[3:] == 0) and np.all(p1.node_attrs[3:] == 0)

    def test_equal_sizes_still_padded(self, rng):
        p1, p2 = pad_with_null_nodes(random_graph(4, rng), random_graph(4, rng))
        assert p1.n == p2.n == 8

    def test_padded_graphs_valid(self, rng):
        p1, p2 = pad_with_null_nodes(random_graph(5, rng), random_graph(3, rng))
        assert validate_graph(p1) == [] and validate_graph(p2) == []


class TestNodeCost:
    def test_values(self):
        g1 = make_graph(np.zeros((2, 2)), [[0, 0], [1, 1]])
        g2 = make_graph(np.zeros((2, 2)), [[3, 4], [1, 1]])
        D = node_cost_matrix(g1, g2)
        assert D[0, 0] == 5.0
        assert D[1, 1] == 0.0

    def test_null_convention(self, rng):
        p1, p2 = pad_with_null_nodes(random_graph(3, rng), random_graph(2, rng))
        D0 = node_cost_matrix(p1, p2, null_cost=0.0)
        assert np.all(D0[3] == 0) and np.all(D0[:, 2:][:3] == 0)
        D7 = node_cost_matrix(p1, p2, null_cost=7.0)
        # row 3 is null in g1; columns 2..4 are null in g2
        np.testing.assert_array_equal(D7[3], [7.0, 7.0, 0.0, 0.0, 0.0])
        assert np.all(D7 >= 0)

    def test_mismatch(self, rng):
        with pytest.raises(DimensionError):
            node_cost_matrix(random_graph(2, rng), random_graph(3, rng))


class TestObjective:
    def test_zero(self, rng):
        A = random_graph(4, rng).adjacency
        assert matching_objective(Permutation.identity(4), A, A, np.zeros((4, 4)), 0.3) == 0.0

    def test_edge_only(self):
        A1 = np.array([[0.0, 1.0], [1.0, 0.0]])
        for p in ([0, 1], [1, 0]):
            assert matching_objective(Permutation(p), A1, np.zeros((2, 2)), np.ones((2, 2)), 1.0) == pytest.approx(
                math.sqrt(2)
            )

    def test_node_only(self, rng):
        D = rng.random((4, 4))
        p = Permutation([2, 0, 3, 1])
        val = matching_objective(p, rng.random((4, 4)), rng.random((4, 4)), D, 0.0)
        assert val == pytest.approx(D[0, 2] + D[1, 0] + D[2, 3] + D[3, 1])

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            matching_objective(Permutation.identity(2), np.zeros((2, 2)), np.zeros((3, 3)), np.zeros((2, 2)), 1)


class TestSolveLap:
    def test_zero_cost(self):
        _, total = solve_lap(np.zeros((4, 4)))
        assert total == 0.0

    def test_two_by_two(self):
        p, total = solve_lap(np.array([[4.0, 1.0], [2.0, 0.0]]))
        assert p.tolist() == [1, 0] and total == 3.0

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force_6x6(self, seed):
        cost = np.random.default_rng(seed).integers(0, 50, (6, 6)).astype(float)
        best = min(sum(cost[i, q[i]] for i in range(6)) for q in itertools.permutations(range(6)))
        p, total = solve_lap(cost)
        assert total == best
        assert sum(cost[i, p.mapping[i]] for i in range(6)) == best

    def test_non_finite(self):
        with pytest.raises(NumericalError):
            solve_lap(np.array([[0.0, np.inf], [1.0, 0.0]]))


class TestTraceIdentity:
    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
    def test_identity(self, n, seed):
        rng = np.random.default_rng(seed)
        A1, A2 = random_graph(n, rng).adjacency, random_graph(n, rng).adjacency
        P = Permutation.random(n, rng).matrix()
        lhs = np.linalg.norm(P @ A1 @ P.T - A2) ** 2
        rhs = np.linalg.norm(A1) ** 2 + np.linalg.norm(A2) ** 2 - 2 * np.trace(A2 @ P @ A1 @ P.T)
        assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-9)

    def test_relaxation_matches_exact_objective_on_permutations(self, rng):
        # at lam=1: ||A1 - P A2 P^T||^2 = const + 2 f(P)
        A1, A2 = random_graph(7, rng).adjacency, random_graph(7, rng).adjacency
        const = np.linalg.norm(A1) ** 2 + np.linalg.norm(A2) ** 2
        for _ in range(10):
            p = Permutation.random(7, rng)
            exact = matching_objective(p, A1, A2, np.zeros((7, 7)), 1.0) ** 2
            assert exact == pytest.approx(const + 2 * relaxed_objective(p.matrix(), A1, A2, np.zeros((7, 7)), 1.0))


class TestFrankWolfe:
    def test_gradient_finite_differences(self, rng):
        n = 5
        A1, A2 = random_graph(n, rng).adjacency, random_graph(n, rng).adjacency
        D = rng.random((n, n))
        X = random_doubly_stochastic(n, rng)
        G = relaxed_gradient(X, A1, A2, D, 0.4)
        h = 1e-6
        for i, j in [(0, 0), (1, 3), (4, 2)]:
            E = np.zeros((n, n))
            E[i, j] = h
            fd = (relaxed_objective(X + E, A1, A2, D, 0.4) - relaxed_objective(X - E, A1, A2, D, 0.4)) / (2 * h)
            assert fd == pytest.approx(G[i, j], rel=1e-6, abs=1e-8)

    def test_iterates_doubly_stochastic_and_descending(self, rng):
        g1, g2 = random_graph(12, rng), random_graph(12, rng)
        D = node_cost_matrix(g1, g2)
        X0 = random_doubly_stochastic(12, rng)
        fw = frank_wolfe(g1.adjacency, g2.adjacency, D, 0.5, X0, 50, 1e-12, keep_iterates=True)
        for X in fw.iterates:
            assert np.abs(X.sum(axis=0) - 1).max() < 1e-8
            assert np.abs(X.sum(axis=1) - 1).max() < 1e-8
            assert X.min() >= -1e-12
        assert all(b <= a + 1e-12 for a, b in zip(fw.trace, fw.trace[1:]))

    def test_fixed_budget_runs_every_iteration(self, rng):
        g = random_graph(6, rng)
        fw = frank_wolfe(g.adjacency, g.adjacency, np.zeros((6, 6)), 1.0, np.eye(6), 7, 1e-9, fixed_budget=True)
        assert len(fw.gaps) == 7


class TestFaqMatch:
    def test_exact_recovery(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            g = random_graph(12, rng)
            g2 = permute_graph(g, Permutation.random(12, rng))
            res = faq_match(g, g2, MatchConfig(lam=1.0, restarts=5, seed=seed))
            assert res.d_post < 1e-9
            assert res.objective_trace and res.restarts_used == 5

    @pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
    def test_self_match(self, rng, lam):
        g = random_graph(8, rng)
        res = faq_match(g, g, MatchConfig(lam=lam, restarts=3))
        D = node_cost_matrix(g, g)
        assert res.objective <= (1 - lam) * np.trace(D) + 1e-12
        assert res.d_post == 0.0

    def test_relabel_equivariance(self):
        # dense generic weights: no automorphisms, so the optimum is unique
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            g1 = random_graph(10, rng, density=0.8)
            noise = 1.0 + 0.05 * rng.standard_normal((10, 10))
            g2 = permute_graph(
                replace(g1, adjacency=g1.adjacency * (noise + noise.T) / 2), Permutation.random(10, rng)
            )
            cfg = MatchConfig(lam=1.0, restarts=1)
            r = faq_match(g1, g2, cfg)
            q = Permutation.random(10, rng)
            r2 = faq_match(g1, permute_graph(g2, q), cfg)
            assert r2.permutation == q.inverse().compose(r.permutation)
            assert abs(r2.objective - r.objective) < 1e-9
            assert abs(r2.d_post - r.d_post) < 1e-9

    def test_near_brute_force(self):
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            g1, g2 = random_graph(5, rng), random_graph(5, rng)
            f = faq_match(g1, g2, MatchConfig(lam=0.5, restarts=10, seed=seed))
            b = brute_force_match(g1, g2, 0.5)
            assert f.objective >= b.objective - 1e-12
            hits += f.objective <= 1.05 * b.objective
        assert hits >= 16

    def test_three_nodes_with_many_restarts_is_exact(self):
        # the smooth surrogate orders permutations like the exact objective only
        # at lam in {0, 1}; in between the unsquared norm can rank them differently
        for seed in range(40):
            rng = np.random.default_rng(seed)
            g1, g2 = random_graph(3, rng, 0.8), random_graph(3, rng, 0.8)
            for lam in (0.0, 1.0):
                f = faq_match(g1, g2, MatchConfig(lam=lam, restarts=6, seed=seed))
                b = brute_force_match(g1, g2, lam)
                assert f.objective == pytest.approx(b.objective, abs=1e-12)
            f = faq_match(g1, g2, MatchConfig(lam=0.5, restarts=6, seed=seed))
            assert f.objective >= brute_force_match(g1, g2, 0.5).objective - 1e-12

    def test_d_post_never_exceeds_d_pre(self):
        for seed in range(30):
            rng = np.random.default_rng(seed)
            g1, g2 = random_graph(9, rng), random_graph(9, rng)
            res = faq_match(g1, g2, MatchConfig(lam=1.0, restarts=2, seed=seed))
            assert res.d_post <= res.d_pre
            assert res.d_pre == graph_distance(g1.adjacency, g2.adjacency)

    def test_threads_do_not_change_result(self, rng):
        g1, g2 = random_graph(10, rng), random_graph(10, rng)
        a = faq_match(g1, g2, MatchConfig(restarts=4, seed=3))
        b = faq_match(g1, g2, MatchConfig(restarts=4, seed=3, threads=3))
        assert a.permutation == b.permutation and a.objective == b.objective

    def test_errors(self, rng):
        with pytest.raises(DimensionError):
            faq_match(random_graph(3, rng), random_graph(4, rng))
        for bad in (dict(lam=1.5), dict(max_iterations=0), dict(convergence_tol=0.0), dict(restarts=0), dict(null_cost=-1)):
            with pytest.raises(DataError):
                MatchConfig(**bad)

    def test_register_pads_unequal(self, rng):
        g1, g2 = random_graph(4, rng), random_graph(3, rng)
        res, g1p, g2r = register(g1, g2, MatchConfig(lam=1.0))
        assert g1p.n == g2r.n == 7 and len(res.permutation) == 7
        assert validate_graph(g2r) == []

    def test_result_round_trip(self, rng):
        g1, g2 = random_graph(5, rng), random_graph(5, rng)
        res = faq_match(g1, g2)
        doc = res.to_dict()
        assert doc["d0"] == doc["d_pre"] and doc["d"] == doc["d_post"]
        back = MatchResult.from_dict(doc)
        assert back.permutation == res.permutation and back.objective == res.objective


class TestBruteForce:
    def test_single_node(self):
        g = make_graph([[0.0]], [[1.0, 2.0]])
        res = brute_force_match(g, g, 0.5)
        assert res.permutation.tolist() == [0] and res.objective == 0.0

    def test_dominates_identity(self, rng):
        g1, g2 = random_graph(3, rng), random_graph(3, rng)
        res = brute_force_match(g1, g2, 1.0)
        ident = matching_objective(Permutation.identity(3), g1.adjacency, g2.adjacency, node_cost_matrix(g1, g2), 1.0)
        assert res.objective <= ident

    def test_refuses_large(self, rng):
        with pytest.raises(DataError, match="n=9"):
            brute_force_match(random_graph(9, rng), random_graph(9, rng), 1.0)
