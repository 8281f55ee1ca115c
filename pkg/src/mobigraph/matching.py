"""Graph registration: null-node padding, the matching objective and the FAQ solver.

Conventions. A :class:`~mobigraph.graph_core.Permutation` ``p`` has matrix
``P[i, p[i]] = 1`` and registers node ``p[i]`` of ``g2`` onto node ``i`` of
``g1``. The matching objective is

    lam * ||A1 - P A2 P^T||_F + (1 - lam) * sum_i D[i, p[i]]

and the solver minimizes its smooth surrogate over doubly stochastic ``X``

    f(X) = -lam * tr(A1 X A2 X^T) + (1 - lam) * <X, D>

by Frank-Wolfe with an exact line search (the FAQ method). The quadratic term
differs from ``||A1 - X A2 X^T||^2 / 2`` by a constant on permutations, so at
``lam = 1`` both select the same permutation. Candidates from all restarts,
plus the identity, are ranked by the exact (unsquared) objective.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError, DimensionError, NumericalError
from .graph_core import MobilityGraph, Permutation, graph_distance, permute_graph

BRUTE_FORCE_MAX_NODES = 8


@dataclass(frozen=True)
class MatchConfig:
    lam: float = 0.5
    max_iterations: int = 100
    convergence_tol: float = 1e-9
    restarts: int = 5
    seed: int = 0
    null_cost: float = 0.0
    # run exactly ``max_iterations`` Frank-Wolfe steps, ignoring the gap test
    fixed_budget: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise DataError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.max_iterations < 1:
            raise DataError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.convergence_tol > 0:
            raise DataError(f"convergence_tol must be > 0, got {self.convergence_tol}")
        if self.restarts < 1:
            raise DataError(f"restarts must be >= 1, got {self.restarts}")
        if self.null_cost < 0:
            raise DataError(f"null_cost must be >= 0, got {self.null_cost}")


@dataclass
class MatchResult:
    permutation: Permutation
    objective: float
    d_pre: float
    d_post: float
    lam: float
    objective_trace: list[float] = field(default_factory=list)
    restarts_used: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "permutation": self.permutation.tolist(),
            "lambda": self.lam,
            "objective": self.objective,
            "d_pre": self.d_pre,
            "d_post": self.d_post,
            # alternative labels for the same two distances: d0 before, d after
            "d0": self.d_pre,
            "d": self.d_post,
            "objective_trace": list(self.objective_trace),
            "restarts_used": self.restarts_used,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> MatchResult:
        try:
            return cls(
                permutation=Permutation(doc["permutation"]),
                objective=float(doc["objective"]),
                d_pre=float(doc["d_pre"]),
                d_post=float(doc["d_post"]),
                lam=float(doc["lambda"]),
                objective_trace=[float(x) for x in doc.get("objective_trace", [])],
                restarts_used=int(doc.get("restarts_used", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid match document: {exc}") from exc


def _null_ids(existing: tuple, count: int, prefix: str) -> list[str]:
    taken = set(existing)
    ids = []
    k = 0
    while len(ids) < count:
        candidate = f"{prefix}{k}"
        if candidate not in taken:
            ids.append(candidate)
        k += 1
    return ids


def _append_nulls(g: MobilityGraph, count: int, prefix: str) -> MobilityGraph:
    n = g.n
    A = np.zeros((n + count, n + count))
    A[:n, :n] = g.adjacency
    attrs = np.zeros((n + count, 2))
    attrs[:n] = g.node_attrs
    mask = np.concatenate([g.null_mask, np.ones(count, dtype=bool)])
    return replace(
        g,
        node_ids=g.node_ids + tuple(_null_ids(g.node_ids, count, prefix)),
        node_attrs=attrs,
        adjacency=A,
        null_mask=mask,
    )


def pad_with_null_nodes(g1: MobilityGraph, g2: MobilityGraph) -> tuple[MobilityGraph, MobilityGraph]:
    """Give ``g1`` ``n2`` null nodes and ``g2`` ``n1`` null nodes (both end at ``n1 + n2``)."""
    return _append_nulls(g1, g2.n, "null-"), _append_nulls(g2, g1.n, "null-")


def node_cost_matrix(g1: MobilityGraph, g2: MobilityGraph, null_cost: float = 0.0) -> np.ndarray:
    """Pairwise attribute distances; pairs with exactly one null node cost ``null_cost``."""
    if g1.n != g2.n:
        raise DimensionError(f"graphs have {g1.n} and {g2.n} nodes; pad them first")
    diff = g1.node_attrs[:, None, :] - g2.node_attrs[None, :, :]
    D = np.sqrt(np.sum(diff * diff, axis=-1))
    m1 = g1.null_mask[:, None]
    m2 = g2.null_mask[None, :]
    D = np.where(m1 ^ m2, float(null_cost), D)
    D = np.where(m1 & m2, 0.0, D)
    return D


def matching_objective(
    p: Permutation, a1: np.ndarray, a2: np.ndarray, d: np.ndarray, lam: float
) -> float:
    n = len(p)
    if not (a1.shape == a2.shape == d.shape == (n, n)):
        raise DimensionError(
            f"inconsistent sizes: permutation {n}, A1 {a1.shape}, A2 {a2.shape}, D {d.shape}"
        )
    idx = p.mapping
    edge = graph_distance(a1, a2[np.ix_(idx, idx)])
    node = float(d[np.arange(n), idx].sum())
    return lam * edge + (1.0 - lam) * node


def solve_lap(cost: np.ndarray) -> tuple[Permutation, float]:
    """Exact minimum-cost assignment ``i -> p[i]``."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise NumericalError("cost matrix has non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    mapping = np.empty(cost.shape[0], dtype=np.int64)
    mapping[rows] = cols
    return Permutation(mapping), float(cost[rows, cols].sum())


# -- Frank-Wolfe on the Birkhoff polytope -----------------------------------


def relaxed_objective(X: np.ndarray, a1: np.ndarray, a2: np.ndarray, d: np.ndarray, lam: float) -> float:
    return float(-lam * np.sum(a1 * (X @ a2 @ X.T)) + (1.0 - lam) * np.sum(X * d))


def relaxed_gradient(X: np.ndarray, a1: np.ndarray, a2: np.ndarray, d: np.ndarray, lam: float) -> np.ndarray:
    return -lam * (a1.T @ X @ a2 + a1 @ X @ a2.T) + (1.0 - lam) * d


@dataclass
class FrankWolfeRun:
    X: np.ndarray
    trace: list[float]
    gaps: list[float]
    iterates: list[np.ndarray] | None = None


def frank_wolfe(
    a1: np.ndarray,
    a2: np.ndarray,
    d: np.ndarray,
    lam: float,
    X0: np.ndarray,
    max_iterations: int,
    tol: float,
    fixed_budget: bool = False,
    keep_iterates: bool = False,
) -> FrankWolfeRun:
    """Minimize the relaxed objective from ``X0``; each step moves toward a LAP vertex."""
    X = np.array(X0, dtype=float, copy=True)
    trace = [relaxed_objective(X, a1, a2, d, lam)]
    gaps: list[float] = []
    iterates = [X.copy()] if keep_iterates else None
    for _ in range(max_iterations):
        grad = relaxed_gradient(X, a1, a2, d, lam)
        if not np.all(np.isfinite(grad)):
            raise NumericalError("Frank-Wolfe gradient became non-finite")
        q, _ = solve_lap(grad)
        Q = q.matrix()
        R = Q - X
        gap = -float(np.sum(grad * R))
        gaps.append(gap)
        if gap < tol and not fixed_budget:
            break
        # f(X + aR) = f(X) + b a + c a^2
        b = -gap
        c = -lam * float(np.sum(a1 * (R @ a2 @ R.T)))
        if c > 0:
            alpha = min(max(-b / (2.0 * c), 0.0), 1.0)
        else:
            alpha = 1.0 if b + c < 0 else 0.0
        if alpha > 0.0:
            X = X + alpha * R
        trace.append(relaxed_objective(X, a1, a2, d, lam))
        if keep_iterates:
            iterates.append(X.copy())
    return FrankWolfeRun(X, trace, gaps, iterates)


def random_doubly_stochastic(n: int, rng: np.random.Generator, sweeps: int = 10) -> np.ndarray:
    """Positive noise balanced by alternating row/column normalization.

    At least ``sweeps`` sweeps are done, continuing until rows and columns sum
    to one within 1e-13 (capped at 10000 sweeps).
    """
    X = rng.random((n, n)) + 1e-3
    X /= X.sum(axis=1, keepdims=True)
    for k in range(10000):
        X /= X.sum(axis=0, keepdims=True)
        X /= X.sum(axis=1, keepdims=True)
        if k + 1 >= sweeps and np.abs(X.sum(axis=0) - 1.0).max() < 1e-13:
            break
    return X


def _check_pair(g1: MobilityGraph, g2: MobilityGraph) -> None:
    if g1.n != g2.n:
        raise DimensionError(f"graphs have {g1.n} and {g2.n} nodes; pad them first")


def faq_match(g1: MobilityGraph, g2: MobilityGraph, cfg: MatchConfig | None = None) -> MatchResult:
    """Register ``g2`` onto ``g1``; returns the best permutation found.

    The first run starts at the barycenter ``J / n``; the remaining
    ``cfg.restarts - 1`` start from random doubly stochastic matrices.
    """
    cfg = cfg or MatchConfig()
    _check_pair(g1, g2)
    n = g1.n
    a1, a2 = g1.adjacency, g2.adjacency
    D = node_cost_matrix(g1, g2, cfg.null_cost)
    lam = cfg.lam
    identity = Permutation.identity(n)
    d_pre = graph_distance(a1, a2)
    if n == 0:
        return MatchResult(identity, 0.0, 0.0, 0.0, lam, [], 0)

    rng = np.random.default_rng(cfg.seed)
    starts = [np.full((n, n), 1.0 / n)]
    starts += [random_doubly_stochastic(n, rng) for _ in range(cfg.restarts - 1)]

    def run(X0: np.ndarray) -> tuple[Permutation, float, list[float]]:
        fw = frank_wolfe(
            a1, a2, D, lam, X0, cfg.max_iterations, cfg.convergence_tol, cfg.fixed_budget
        )
        p, _ = solve_lap(-fw.X)
        return p, matching_objective(p, a1, a2, D, lam), fw.trace

    if cfg.threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            runs = list(pool.map(run, starts))
    else:
        runs = [run(X0) for X0 in starts]

    best_p, best_obj, best_trace = runs[0]
    for p, obj, tr in runs[1:]:
        if obj < best_obj:
            best_p, best_obj, best_trace = p, obj, tr
    id_obj = matching_objective(identity, a1, a2, D, lam)
    if id_obj < best_obj:
        best_p, best_obj = identity, id_obj
    d_post = graph_distance(a1, a2[np.ix_(best_p.mapping, best_p.mapping)])
    return MatchResult(best_p, best_obj, d_pre, d_post, lam, best_trace, len(runs))


def brute_force_match(
    g1: MobilityGraph, g2: MobilityGraph, lam: float, null_cost: float = 0.0
) -> MatchResult:
    """Exact minimizer by enumeration of all ``n!`` permutations (``n <= 8``)."""
    _check_pair(g1, g2)
    n = g1.n
    if n > BRUTE_FORCE_MAX_NODES:
        raise DataError(
            f"brute force refused for n={n} > {BRUTE_FORCE_MAX_NODES} ({math.factorial(n)} permutations)"
        )
    a1, a2 = g1.adjacency, g2.adjacency
    D = node_cost_matrix(g1, g2, null_cost)
    best_p, best_obj = None, math.inf
    for perm in itertools.permutations(range(n)):
        p = Permutation(perm)
        obj = matching_objective(p, a1, a2, D, lam)
        if obj < best_obj:
            best_p, best_obj = p, obj
    assert best_p is not None
    d_post = graph_distance(a1, a2[np.ix_(best_p.mapping, best_p.mapping)])
    return MatchResult(best_p, best_obj, graph_distance(a1, a2), d_post, lam, [best_obj], math.factorial(n))


def register(g1: MobilityGraph, g2: MobilityGraph, cfg: MatchConfig | None = None) -> tuple[MatchResult, MobilityGraph, MobilityGraph]:
    """Pad only if sizes differ, match, and return ``(result, g1', g2 registered)``."""
    if g1.n != g2.n:
        g1, g2 = pad_with_null_nodes(g1, g2)
    res = faq_match(g1, g2, cfg)
    return res, g1, permute_graph(g2, res.permutation)
