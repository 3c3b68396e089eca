from fractions import Fraction

import numpy as np
import pytest

from lerwlab.graph import WeightedGraph
from lerwlab.lattices import grid


def path_graph(n, weight=1):
    edges = [(i, i + 1) for i in range(n - 1)]
    return WeightedGraph.from_edges(np.arange(n, dtype=float), edges, [Fraction(weight)] * len(edges))


def small_grid(nx, ny):
    """Finite nx-by-ny grid with unit weights (no frontier)."""
    return grid(2, box=((0, 0), (nx, ny))).to_weighted(finite=True)


def tv_distance(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(float(p.get(k, 0)) - float(q.get(k, 0))) for k in keys)


@pytest.fixture
def path4():
    return path_graph(4)


@pytest.fixture
def grid33():
    return small_grid(3, 3)


@pytest.fixture
def grid43():
    return small_grid(4, 3)


# -- acceptance reporting -------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """report(n, ok, detail): record one acceptance line, then assert it."""

    def report(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
