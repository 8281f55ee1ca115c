"""Experiment protocols: distance sweeps, Monte-Carlo link prediction,
matched-vs-unmatched comparison and matching run-time scaling."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DataError
from .gnn import DEFAULT_LR, predict_links, split_edges, train_link_predictor
from .graph_core import MobilityGraph, Permutation, make_graph, permute_graph
from .matching import MatchConfig, faq_match, register

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class McConfig:
    trials: int = 100
    top_k: int = 10
    bins: int = 10
    epochs: int = 10000
    lr: float = DEFAULT_LR
    node_sizes: tuple[int, ...] = (16, 32, 64, 128)
    base_seed: int = 0
    test_fraction: float = 0.2
    threads: int = 1

    def __post_init__(self) -> None:
        for name in ("trials", "top_k", "bins"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise DataError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class LikelihoodHistogram:
    bin_edges: np.ndarray
    correct_counts: np.ndarray
    incorrect_counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.correct_counts.sum() + self.incorrect_counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "correct", "incorrect"])
        for k in range(len(self.correct_counts)):
            w.writerow(
                [
                    repr(float(self.bin_edges[k])),
                    repr(float(self.bin_edges[k + 1])),
                    int(self.correct_counts[k]),
                    int(self.incorrect_counts[k]),
                ]
            )
        return buf.getvalue()


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    scores: tuple[float, ...]  # top-k likelihoods, descending
    correct: tuple[bool, ...]
    final_loss: float

    @property
    def n_correct(self) -> int:
        return sum(self.correct)


def histogram_from_records(records: Sequence[TrialRecord], bins: int) -> LikelihoodHistogram:
    edges = np.linspace(0.0, 1.0, bins + 1)
    correct = np.zeros(bins, dtype=np.int64)
    incorrect = np.zeros(bins, dtype=np.int64)
    for rec in records:
        for s, ok in zip(rec.scores, rec.correct):
            k = min(int(s * bins), bins - 1)
            if ok:
                correct[k] += 1
            else:
                incorrect[k] += 1
    return LikelihoodHistogram(edges, correct, incorrect)


def _run_trial(g: MobilityGraph, cfg: McConfig, trial: int) -> TrialRecord:
    seed = cfg.base_seed + trial
    split = split_edges(g, cfg.test_fraction, seed)
    candidates = list(split.test_pos) + list(split.test_neg)
    if len(candidates) < cfg.top_k:
        raise DataError(
            f"only {len(candidates)} test candidates for top_k={cfg.top_k}; graph too small to split"
        )
    model, losses = train_link_predictor(g, split, cfg.epochs, cfg.lr, seed)
    scores = predict_links(model, split.train_graph(g), candidates)
    # stable descending order; ties keep candidate order
    order = np.argsort(-scores, kind="stable")[: cfg.top_k]
    n_pos = len(split.test_pos)
    return TrialRecord(
        trial=trial,
        seed=seed,
        scores=tuple(float(scores[i]) for i in order),
        correct=tuple(bool(i < n_pos) for i in order),
        final_loss=losses[-1] if losses else float("nan"),
    )


def run_monte_carlo(
    g: MobilityGraph, cfg: McConfig | None = None
) -> tuple[LikelihoodHistogram, list[TrialRecord]]:
    """Repeat split/train/score ``cfg.trials`` times and bin the top-k likelihoods."""
    cfg = cfg or McConfig()
    trials = range(cfg.trials)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            records = list(pool.map(lambda t: _run_trial(g, cfg, t), trials))
    else:
        records = [_run_trial(g, cfg, t) for t in trials]
    return histogram_from_records(records, cfg.bins), records


# -- matched vs unmatched ------------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    n_nodes: int
    avg_correct_matched: float
    avg_incorrect_matched: float
    avg_correct_unmatched: float
    avg_incorrect_unmatched: float
    error_reduction_pct: float


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            [
                "n_nodes",
                "avg_correct_matched",
                "avg_incorrect_matched",
                "avg_correct_unmatched",
                "avg_incorrect_unmatched",
                "error_reduction_pct",
            ]
        )
        for r in self.rows:
            w.writerow(
                [r.n_nodes]
                + [
                    repr(float(x))
                    for x in (
                        r.avg_correct_matched,
                        r.avg_incorrect_matched,
                        r.avg_correct_unmatched,
                        r.avg_incorrect_unmatched,
                        r.error_reduction_pct,
                    )
                ]
            )
        return buf.getvalue()


def _with_reference_attrs(g: MobilityGraph, ref: MobilityGraph) -> MobilityGraph:
    """Adjacency of ``g`` paired node-by-node with the layout coordinates of ``ref``."""
    attrs = np.array(ref.node_attrs)
    attrs[g.null_mask] = 0.0
    return replace(g, node_attrs=attrs)


def _arm_averages(records: Sequence[TrialRecord], top_k: int) -> tuple[float, float]:
    correct = float(np.mean([r.n_correct for r in records]))
    return correct, float(top_k - correct)


def compare_matched_unmatched(
    g1: MobilityGraph,
    g2: MobilityGraph,
    cfg: McConfig | None = None,
    match_cfg: MatchConfig | None = None,
) -> ComparisonRow:
    """Link-prediction quality on ``g2`` registered onto ``g1`` versus ``g2`` as given.

    Both arms read node coordinates from ``g1``, so the only difference is
    whether ``g2``'s node order has been aligned to them.
    """
    cfg = cfg or McConfig()
    result, g1_used, g2_registered = register(g1, g2, match_cfg)
    matched = _with_reference_attrs(g2_registered, g1_used)
    unmatched_src = g2 if g2.n == g1_used.n else permute_graph(g2_registered, result.permutation.inverse())
    unmatched = _with_reference_attrs(unmatched_src, g1_used)
    _, rec_m = run_monte_carlo(matched, cfg)
    _, rec_u = run_monte_carlo(unmatched, cfg)
    cm, im = _arm_averages(rec_m, cfg.top_k)
    cu, iu = _arm_averages(rec_u, cfg.top_k)
    reduction = 100.0 * (iu - im) / iu if iu > 0 else 0.0
    return ComparisonRow(len(g1.real_nodes), cm, im, cu, iu, reduction)


# -- timing ----------------------------------------------------------------------


@dataclass
class QuadraticFit:
    a: float
    b: float
    c: float
    r_squared: float
    degenerate: bool = False


@dataclass
class TimingReport:
    node_sizes: list[int]
    median_seconds: list[float]
    fit: QuadraticFit

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_nodes", "median_seconds", "fit_seconds"])
        for n, t in zip(self.node_sizes, self.median_seconds):
            w.writerow([n, repr(t), repr(self.fit.a * n * n + self.fit.b * n + self.fit.c)])
        w.writerow([])
        w.writerow(["a", "b", "c", "r_squared", "degenerate"])
        w.writerow([repr(self.fit.a), repr(self.fit.b), repr(self.fit.c), repr(self.fit.r_squared), self.fit.degenerate])
        return buf.getvalue()


def fit_quadratic(xs: Sequence[float], ys: Sequence[float]) -> QuadraticFit:
    """Least-squares ``y = a x^2 + b x + c`` and its coefficient of determination.

    A response with zero variance is reported as degenerate with ``r^2 = 0``.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 3:
        raise DataError(f"need at least 3 sizes to fit a quadratic, got {x.size}")
    V = np.stack([x * x, x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    resid = y - V @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return QuadraticFit(*map(float, coef), r_squared=0.0, degenerate=True)
    return QuadraticFit(*map(float, coef), r_squared=max(0.0, 1.0 - ss_res / ss_tot))


def random_weighted_graph(n: int, rng: np.random.Generator, density: float = 0.5) -> MobilityGraph:
    """Erdos-Renyi support with uniform(0, 1] weights and uniform node coordinates."""
    mask = np.triu(rng.random((n, n)) < density, k=1)
    A = np.where(mask, 1.0 - rng.random((n, n)), 0.0)
    return make_graph(A + A.T, rng.uniform(-1, 1, (n, 2)))


def timing_benchmark(
    node_sizes: Sequence[int] = (16, 32, 64, 128),
    repeats: int = 5,
    seed: int = 0,
    iterations: int = 30,
    lam: float = 0.5,
) -> TimingReport:
    """Median wall time of one fixed-budget match per size, with a quadratic fit."""
    if len(node_sizes) < 3:
        raise DataError(f"need at least 3 sizes to fit a quadratic, got {len(node_sizes)}")
    cfg = MatchConfig(lam=lam, max_iterations=iterations, restarts=1, fixed_budget=True)
    medians = []
    for n in node_sizes:
        rng = np.random.default_rng([seed, n])
        times = []
        for _ in range(max(repeats, 1)):
            g1 = random_weighted_graph(n, rng)
            g2 = permute_graph(random_weighted_graph(n, rng), Permutation.random(n, rng))
            t0 = time.perf_counter()
            faq_match(g1, g2, cfg)
            times.append(time.perf_counter() - t0)
        medians.append(float(np.median(times)))
        log.info("n=%d median %.4fs", n, medians[-1])
    return TimingReport(list(node_sizes), medians, fit_quadratic(node_sizes, medians))


# -- distance sweep ----------------------------------------------------------------


@dataclass(frozen=True)
class DistanceRow:
    lam: float
    d_pre: float
    d_post: float
    objective: float


DEFAULT_LAMBDAS = (0.0, 0.5, 1.0)


def distance_report(
    g1: MobilityGraph,
    g2: MobilityGraph,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    match_cfg: MatchConfig | None = None,
) -> list[DistanceRow]:
    base = match_cfg or MatchConfig()
    rows = []
    for lam in lambdas:
        res, _, _ = register(g1, g2, replace(base, lam=float(lam)))
        rows.append(DistanceRow(float(lam), res.d_pre, res.d_post, res.objective))
    return rows


def distance_rows_to_csv(rows: Sequence[DistanceRow]) -> str:
    """``d0``/``d`` repeat ``d_pre``/``d_post`` under their alternative labels."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "d_pre", "d_post", "d0", "d", "objective"])
    for r in rows:
        w.writerow([repr(r.lam), repr(r.d_pre), repr(r.d_post), repr(r.d_pre), repr(r.d_post), repr(r.objective)])
    return buf.getvalue()
