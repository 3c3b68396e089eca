from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import path_graph, small_grid, tv_distance
from lerwlab.checks import (bpp_sandwich, green_symmetry, random_instance, reversal_symmetry, time_symmetry)
from lerwlab.graph import WeightedGraph
from lerwlab.lattices import centered_grid
from lerwlab.oracle import (BudgetExceeded, OracleError, exact_lerw_law, greens_function, harmonic_solve,
                            hit_probability, hitting_distribution, laplacian_walk_step, martin_capacity,
                            stack_chain_law)
from lerwlab.rng import RngStream
from lerwlab.walks import StopSpec, sample_paths


def instance(seed, n_min=4, n_max=8):
    return random_instance(np.random.default_rng(seed), n_min=n_min, n_max=n_max)


def path_marginal(law):
    out = {}
    for k, p in law.items():
        if k is None:
            continue
        out[k[0]] = out.get(k[0], 0) + p
    return out


# -- harmonic functions and Green's function ---------------------------------

def test_harmonic_solve_examples(path4):
    f = harmonic_solve(path4, {0: Fraction(0), 3: Fraction(1)}, [1, 2])
    assert f[1] == Fraction(1, 3) and f[2] == Fraction(2, 3)
    g = small_grid(4, 4)
    inner = [g.id_of((1, 1)), g.id_of((1, 2)), g.id_of((2, 1)), g.id_of((2, 2))]
    bnd = {v: Fraction(7) for v in range(g.n) if v not in inner}
    f = harmonic_solve(g, bnd, inner)
    assert all(f[v] == 7 for v in inner)


def test_harmonic_solve_missing_boundary(path4):
    with pytest.raises(OracleError):
        harmonic_solve(path4, {0: Fraction(0)}, [1, 2])


@given(st.integers(0, 2 ** 20))
@settings(max_examples=30, deadline=None)
def test_harmonic_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    g = small_grid(5, 4)
    inner = [v for v in range(g.n) if 0 < g.ipos[v][0] < 4 and 0 < g.ipos[v][1] < 3]
    bnd = {v: Fraction(int(rng.integers(-5, 6))) for v in range(g.n) if v not in inner}
    f = harmonic_solve(g, bnd, inner)
    assert max(f[v] for v in inner) <= max(bnd.values())
    assert min(f[v] for v in inner) >= min(bnd.values())


def test_greens_function_examples(path4):
    G = greens_function(path4, [1, 2])
    assert G(1, 1) == Fraction(4, 3) and G(1, 2) == Fraction(2, 3)
    assert G(0, 1) == 0 and G(1, 3) == 0
    z = centered_grid(3, 2).to_weighted(finite=True)
    s = z.id_of((0, 0, 0))
    assert greens_function(z, [s])(s, s) == 1


@given(st.integers(0, 2 ** 20))
@settings(max_examples=30, deadline=None)
def test_green_properties(seed):
    g = instance(seed)
    rng = np.random.default_rng(seed)
    S = np.sort(rng.permutation(g.n)[: int(rng.integers(1, g.n))])
    G = greens_function(g, S, mode="exact")
    assert all(x >= 0 for row in G.values for x in row)
    assert all(G.values[i][i] >= 1 for i in range(len(S)))
    assert green_symmetry(g, S)[0]


def test_green_float_mode_matches_exact():
    g = instance(3, 8, 8)
    S = list(range(5))
    a = greens_function(g, S, mode="exact")
    b = greens_function(g, S, mode="float")
    assert np.allclose(np.array(a.values, dtype=float), np.asarray(b.values), atol=1e-12)


# -- hitting ---------------------------------------------------------------

def test_gamblers_ruin():
    g = path_graph(5)
    assert hitting_distribution(g, 2, [0, 4]).as_dict()[0] == Fraction(1, 2)
    assert hitting_distribution(g, 1, [0, 4]).as_dict()[0] == Fraction(3, 4)
    assert hit_probability(g, 1, [4], [0]) == Fraction(1, 4)


@given(st.integers(0, 2 ** 20))
@settings(max_examples=30, deadline=None)
def test_hitvector_sums_to_one(seed):
    g = instance(seed)
    rng = np.random.default_rng(seed)
    A = np.sort(rng.permutation(g.n)[: int(rng.integers(1, g.n))])
    hv = hitting_distribution(g, int(rng.integers(0, g.n)), A, mode="exact")
    assert hv.total() == 1


@given(st.integers(0, 2 ** 20))
@settings(max_examples=30, deadline=None)
def test_time_symmetry(seed):
    g = instance(seed)
    rng = np.random.default_rng(seed)
    A = np.sort(rng.permutation(g.n)[: int(rng.integers(2, g.n + 1))])
    assert time_symmetry(g, A)[0]


# -- LERW laws -------------------------------------------------------------

def test_lerw_on_tree_is_unique_path():
    g = WeightedGraph.from_edges(np.arange(5, dtype=float), [(0, 1), (1, 2), (1, 3), (3, 4)], [Fraction(1)] * 4)
    assert exact_lerw_law(g, 0, [4]) == {(0, 1, 3, 4): 1}


def test_lerw_triangle_by_hand():
    # LE first step from 0 has weights p(0,x) h(x), h(2) = 1, h(1) = 1/2
    g = WeightedGraph.from_edges(np.arange(3, dtype=float), [(0, 1), (1, 2), (0, 2)], [Fraction(1)] * 3)
    assert exact_lerw_law(g, 0, [2]) == {(0, 1, 2): Fraction(1, 3), (0, 2): Fraction(2, 3)}


def test_lerw_law_two_routes_agree(grid33, grid43):
    for g, start, A in ((grid33, 4, [0, 2, 6, 8]), (grid43, grid43.id_of((1, 1)), [grid43.id_of((3, 2))])):
        a = exact_lerw_law(g, start, A)
        b = path_marginal(stack_chain_law(g, start, A))
        assert sum(a.values()) == 1
        assert a == b


def test_lerw_law_matches_monte_carlo(grid33):
    corners = [0, 2, 6, 8]
    law = exact_lerw_law(grid33, 4, corners)
    n = 100000
    paths, _, _ = sample_paths(grid33, 4, StopSpec(absorbing=corners), n, RngStream(5))
    emp = Counter(tuple(int(x) for x in p) for p in paths)
    assert tv_distance(law, {k: v / n for k, v in emp.items()}) <= 0.02


def test_first_step_marginal_is_laplacian_step(grid43):
    A = [grid43.id_of((3, 2)), grid43.id_of((0, 0))]
    v = grid43.id_of((1, 1))
    law = exact_lerw_law(grid43, v, A)
    first = {}
    for p, q in law.items():
        first[p[1]] = first.get(p[1], 0) + q
    assert first == laplacian_walk_step(grid43, [v], A)


def test_laplacian_step_examples():
    z = small_grid(7, 7)
    o = z.id_of((3, 3))
    far = [v for v in range(z.n) if 0 in z.ipos[v] or 6 in z.ipos[v]]
    law = laplacian_walk_step(z, [o], far)
    assert len(law) == 4 and all(p > 0 for p in law.values())
    # gamma blocks three of the four neighbours
    gamma = [z.id_of((2, 3)), z.id_of((2, 4)), z.id_of((3, 4)), z.id_of((4, 4)), z.id_of((4, 3)), o]
    law = laplacian_walk_step(z, gamma, far)
    assert law == {z.id_of((3, 2)): 1}


def test_lerw_budget_guard(grid43):
    with pytest.raises(BudgetExceeded):
        exact_lerw_law(grid43, 5, [0], budget=10)


def test_conditioned_reversal_symmetry(grid43):
    b0, b1 = grid43.id_of((0, 0)), grid43.id_of((3, 2))
    ok, diff = reversal_symmetry(grid43, b0, b1)
    assert ok and diff == 0


@given(st.integers(0, 2 ** 20))
@settings(max_examples=20, deadline=None)
def test_conditioned_reversal_symmetry_random(seed):
    g = instance(seed, 4, 7)
    assert reversal_symmetry(g, 0, 1)[0]


@pytest.mark.parametrize("n", [2, 3])
def test_visit_count_stopping_same_law(grid43, n):
    v, w = grid43.id_of((1, 1)), grid43.id_of((3, 2))
    one = path_marginal(stack_chain_law(grid43, v, count_vertex=w, n_visits=1))
    many = path_marginal(stack_chain_law(grid43, v, count_vertex=w, n_visits=n))
    assert sum(one.values()) == 1
    assert one == many


def test_visit_count_stopping_with_forbidden_set(grid43):
    v, w = grid43.id_of((1, 1)), grid43.id_of((3, 2))
    B = [grid43.id_of((2, 0))]

    def normalized(n):
        law = stack_chain_law(grid43, v, count_vertex=w, n_visits=n, forbidden=B)
        killed = law.get(None, 0)
        return {k: p / (1 - killed) for k, p in path_marginal(law).items()}

    assert normalized(1) == normalized(2)


# -- capacity ---------------------------------------------------------------

def capacity_setup():
    z = small_grid(7, 7)
    sink = [v for v in range(z.n) if 0 in z.ipos[v] or 6 in z.ipos[v]]
    return z, z.id_of((3, 3)), sink


def test_capacity_singleton_equals_hit_probability():
    z, src, sink = capacity_setup()
    x = z.id_of((1, 4))
    rep = martin_capacity(z, src, sink, [x])
    assert abs(rep.capacity - float(rep.hit_probability)) < 1e-10
    assert rep.sandwich


def test_capacity_two_far_points():
    z, src, sink = capacity_setup()
    a, b = z.id_of((1, 1)), z.id_of((5, 5))
    ca = martin_capacity(z, src, sink, [a]).capacity
    cb = martin_capacity(z, src, sink, [b]).capacity
    rep = martin_capacity(z, src, sink, [a, b])
    assert max(ca, cb) - 1e-9 <= rep.capacity <= ca + cb + 1e-9
    assert rep.sandwich


@given(st.integers(0, 2 ** 20))
@settings(max_examples=50, deadline=None)
def test_bpp_sandwich_random(seed):
    g = instance(seed, 5, 9)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(g.n)
    S = np.sort(perm[1:1 + int(rng.integers(1, g.n - 2))])
    try:
        ok, info = bpp_sandwich(g, int(perm[0]), [int(perm[-1])], S)
    except OracleError:
        return  # a target cut off from the source by the sink
    assert ok, info
