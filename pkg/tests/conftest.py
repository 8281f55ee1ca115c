from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from mobigraph.graph_core import MobilityGraph, Permutation, make_graph, permute_graph

FIXTURES = Path(__file__).parent / "fixtures"


def random_graph(n: int, rng: np.random.Generator, density: float = 0.5) -> MobilityGraph:
    mask = np.triu(rng.random((n, n)) < density, k=1)
    A = np.where(mask, 1.0 - rng.random((n, n)), 0.0)
    return make_graph(A + A.T, rng.uniform(-1, 1, (n, 2)))


def geometric_graph(n: int, rng: np.random.Generator, radius: float = 0.6) -> MobilityGraph:
    pts = rng.uniform(-1, 1, (n, 2))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    A = np.triu(np.where(d < radius, 5.0 + 20.0 * d, 0.0), k=1)
    return make_graph(A + A.T, pts)


def planted_pair(n: int, rng: np.random.Generator, noise: float = 0.05):
    """``g1`` and a permuted copy with multiplicative edge-weight noise."""
    g1 = geometric_graph(n, rng)
    E = np.triu(rng.normal(0.0, noise, (n, n)), k=1)
    noisy = replace(g1, adjacency=g1.adjacency * (1.0 + E + E.T))
    p = Permutation.random(n, rng)
    return g1, permute_graph(noisy, p), p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def trips_csv() -> Path:
    return FIXTURES / "trips_200.csv"


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
