import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lerwlab.estimators import (EstimatorError, UnitBox, beurling_hit, cut_point_density, escape_probability,
                                exit_time_tail, growth_exponent, interpolation_consistency, isotropy_check,
                                loglog_fit, nonintersection_scaling, quasi_loop_count, quasi_loop_count_naive,
                                quasi_loop_decay)
from lerwlab.graph import HalfSpaceSpec, euclidean_ball
from lerwlab.lattices import centered_grid
from lerwlab.rng import RngStream
from lerwlab.walks import StopSpec, cut_points, run_until


def origin(g):
    return g.id_of((0,) * g.dim)


# -- fits -----------------------------------------------------------------------

def test_loglog_fit_exact_power():
    x = np.array([2.0, 4.0, 8.0, 16.0])
    slope, se, icpt = loglog_fit(x, 3 * x ** 1.5)
    assert abs(slope - 1.5) < 1e-12 and se < 1e-12 and abs(icpt - math.log(3)) < 1e-12
    with pytest.raises(EstimatorError):
        loglog_fit([1, 2], [1, 2])


# -- quasi-loops ----------------------------------------------------------------

def square_loop():
    # side 10, ends one unit from the start
    pts = [(i, 0) for i in range(11)] + [(10, j) for j in range(1, 11)]
    pts += [(i, 10) for i in range(9, -1, -1)] + [(0, j) for j in range(9, 0, -1)]
    return np.array(pts, dtype=float)


def test_quasi_loop_examples():
    line = np.array([(i, 0, 0) for i in range(60)], dtype=float)
    for s, r in ((1.0, 2.5), (2.0, 5.0), (3.0, 7.0)):
        assert quasi_loop_count(line, s, r) == 0
    assert quasi_loop_count(square_loop(), 2.0, 5.0) >= 1
    with pytest.raises(EstimatorError):
        quasi_loop_count(line, 0.0, 1.0)


def random_lattice_path(seed, n, dim):
    rng = np.random.default_rng(seed)
    steps = np.zeros((n, dim))
    axis = rng.integers(0, dim, n)
    steps[np.arange(n), axis] = rng.choice([-1.0, 1.0], n)
    return np.vstack([np.zeros(dim), np.cumsum(steps, axis=0)])


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 3), st.floats(0.6, 4.0), st.floats(0.5, 12.0))
@settings(max_examples=80, deadline=None)
def test_quasi_loop_fast_equals_naive(seed, dim, s, r):
    P = random_lattice_path(seed, 120, dim)
    o = np.random.default_rng(seed).uniform(-1, 1, dim)
    assert quasi_loop_count(P, s, r, origin=o) == quasi_loop_count_naive(P, s, r, origin=o)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.6, 4.0), st.floats(0.5, 10.0), st.floats(0.5, 10.0))
@settings(max_examples=60, deadline=None)
def test_quasi_loop_monotone_in_r(seed, s, r1, r2):
    P = random_lattice_path(seed, 150, 2)
    r1, r2 = sorted((r1, r2))
    assert quasi_loop_count(P, s, r1) >= quasi_loop_count(P, s, r2) >= 0


def test_quasi_loop_decay_guards():
    g = centered_grid(2, 40)
    box = ((-40, -40), (40, 40))
    with pytest.raises(EstimatorError):
        quasi_loop_decay(g, box, origin(g), 0.0, [8, 16, 32], 200, RngStream(0))
    with pytest.raises(EstimatorError):
        quasi_loop_decay(g, box, origin(g), 0.4, [8, 16, 32], 50, RngStream(0))
    with pytest.raises(EstimatorError):
        quasi_loop_decay(g, box, origin(g), 0.4, [8, 16, 64], 200, RngStream(0))


def test_quasi_loop_decay_z2_runs_and_reproduces():
    g = centered_grid(2, 40)
    box = ((-40, -40), (40, 40))
    a = quasi_loop_decay(g, box, origin(g), 0.4, [8, 16, 32], 300, RngStream(3))
    b = quasi_loop_decay(g, box, origin(g), 0.4, [8, 16, 32], 300, RngStream(3), workers=3)
    assert np.array_equal(a.stat, b.stat) and np.array_equal(a.stat_se, b.stat_se)
    assert np.all(a.stat >= 0) and np.allclose(a.table["s"], np.array([8, 16, 32]) ** 0.6)


# -- growth -----------------------------------------------------------------------

def test_growth_exponent_one_dimension_exact():
    g = centered_grid(1, 70)
    est = growth_exponent(g, origin(g), [8, 16, 32, 64], 1000, RngStream(1))
    assert np.array_equal(est.stat, [8, 16, 32, 64])
    assert abs(est.exponent - 1) < 1e-3


def test_growth_exponent_guards():
    g = centered_grid(1, 70)
    with pytest.raises(EstimatorError):
        growth_exponent(g, origin(g), [4, 8, 16], 1000, RngStream(1))
    with pytest.raises(EstimatorError):
        growth_exponent(g, origin(g), [8, 16, 32], 999, RngStream(1))
    with pytest.raises(EstimatorError):
        growth_exponent(g, origin(g), [8, 32, 16], 1000, RngStream(1))


@pytest.mark.slow
def test_growth_exponent_five_dimensions():
    g = centered_grid(5, 35)
    est = growth_exponent(g, origin(g), [8, 16, 32], 2000, RngStream(2))
    assert abs(est.exponent - 2) <= 0.1, est.exponent


def test_growth_reproducible_across_workers():
    g = centered_grid(3, 20)
    a = growth_exponent(g, origin(g), [8, 12, 16], 1000, RngStream(8), workers=1)
    b = growth_exponent(g, origin(g), [8, 12, 16], 1000, RngStream(8), workers=4)
    assert a.rows() == b.rows()


# -- non-intersection ---------------------------------------------------------------

def test_nonintersection_one_dimension():
    g = centered_grid(1, 40)
    est = nonintersection_scaling(g, origin(g), g.id_of((1,)), [4, 8, 16, 32], 100000, RngStream(4))
    assert np.all(np.diff(est.stat) <= 0)
    assert abs(est.exponent - 2) < 0.2


def test_nonintersection_guards():
    g = centered_grid(2, 20)
    with pytest.raises(EstimatorError):
        nonintersection_scaling(g, origin(g), g.id_of((3, 0)), [4, 8, 16], 100, RngStream(0))
    with pytest.raises(EstimatorError):
        nonintersection_scaling(g, origin(g), origin(g), [4, 8, 16], 100, RngStream(0))


def test_nonintersection_five_dimensions_bounded_below():
    g = centered_grid(5, 18)
    est = nonintersection_scaling(g, origin(g), g.id_of((1, 0, 0, 0, 0)), [4, 8, 16], 4000, RngStream(5))
    assert np.all(np.diff(est.stat) <= 0)
    # the drop from r=8 to r=16 is small compared with any power-law decay
    assert est.stat[-1] > 0.25 and est.stat[-1] / est.stat[1] > 0.85


# -- escape and Beurling ----------------------------------------------------------------

def test_escape_slab_closed_form():
    # the slab is unbounded sideways, so the box is generous
    g = centered_grid(3, 400)
    H = HalfSpaceSpec((0, 0, 1), -4)
    est = escape_probability(g, origin(g), H, [8, 16, 32], 20000, RngStream(6), variant="slab")
    assert np.allclose(est.table["closed_form"], [0.5, 0.25, 0.125])
    assert np.all(np.abs(est.stat - est.table["closed_form"]) <= 3 * est.stat_se + 1e-12)


def test_escape_slab_start_beyond_the_plane():
    # the stopping plane lies below the start, so the walk escapes at time 0
    g = centered_grid(3, 40)
    H = HalfSpaceSpec((0, 0, 1), -30)
    est = escape_probability(g, origin(g), H, [8, 16, 24], 200, RngStream(6), variant="slab")
    assert np.all(est.stat == 1)


def test_escape_guards():
    g = centered_grid(3, 20)
    with pytest.raises(EstimatorError):
        escape_probability(g, origin(g), HalfSpaceSpec((0, 0, 1), 1), [8], 10, RngStream(0))
    with pytest.raises(EstimatorError):
        escape_probability(g, origin(g), HalfSpaceSpec((0, 0, 1), -0.5), [8], 10, RngStream(0))
    with pytest.raises(EstimatorError):
        escape_probability(g, origin(g), HalfSpaceSpec((0, 0, 1), -5), [8, 16], 10, RngStream(0))


def test_escape_ratio_band():
    g = centered_grid(3, 67)
    H = HalfSpaceSpec((0, 0, 1), -4)
    est = escape_probability(g, origin(g), H, [16, 32, 64], 4000, RngStream(7))
    ratio = est.table["ratio"]
    assert ratio.max() / ratio.min() <= 4


def test_beurling_full_shell_is_certain():
    g = centered_grid(3, 40)
    o = origin(g)
    shell = np.setdiff1d(euclidean_ball(g, (0, 0, 0), 9.0), euclidean_ball(g, (0, 0, 0), 3.0))
    est = beurling_hit(g, o, shell, 4.0, 500, RngStream(0))
    assert est.p == 1


def test_beurling_requires_crossing_connected_set():
    g = centered_grid(3, 40)
    o = origin(g)
    near = [g.id_of((1, 0, 0))]
    with pytest.raises(EstimatorError):
        beurling_hit(g, o, near, 8.0, 10, RngStream(0))
    gap = [g.id_of((i, 0, 0)) for i in (2, 3, 20)]
    with pytest.raises(EstimatorError):
        beurling_hit(g, o, gap, 8.0, 10, RngStream(0))


# -- isotropy ---------------------------------------------------------------------------

def test_isotropy_z2_quadrants_exact():
    g = centered_grid(2, 12)
    rep = isotropy_check(g, origin(g), 8.0, 4, mode="exact")
    assert all(d == 0 for d in rep.deviations)
    assert sum(rep.p) == 1 and sum(rep.areas) == 1
    assert rep.check()


def test_isotropy_z3_octants():
    g = centered_grid(3, 14)
    rep = isotropy_check(g, origin(g), 10.0, 8, mode="exact")
    assert abs(sum(rep.p) - 1) < 1e-9 and abs(sum(rep.areas) - 1) < 1e-9
    assert rep.cell_of.size == rep.stop_ids.size and np.all((rep.cell_of >= 0) & (rep.cell_of < 8))
    assert rep.max_deviation <= 0.025


def test_isotropy_mc_mode_agrees_with_exact():
    g = centered_grid(3, 12)
    ex = isotropy_check(g, origin(g), 8.0, 8, mode="exact")
    mc = isotropy_check(g, origin(g), 8.0, 8, mode="mc", trials=20000, rng=RngStream(1))
    for p, q, se in zip(ex.p, mc.p, mc.stderr):
        assert abs(float(p) - q) <= 4 * se + 1e-12


# -- exit times ----------------------------------------------------------------------------

def test_exit_time_tail_shape():
    g = centered_grid(2, 20)
    rep = exit_time_tail(g, origin(g), 8.0, 5000, RngStream(2))
    rows = rep.rows()
    assert rows[0]["estimate"] == 1
    p = [row["estimate"] for row in rows]
    assert all(a >= b for a, b in zip(p, p[1:]))
    assert rep.extra["corr_log_linear"] <= -0.95
    with pytest.raises(EstimatorError):
        exit_time_tail(g, origin(g), 3.0, 10, RngStream(0))


def test_exit_time_half_life_scales_like_r_squared():
    g = centered_grid(2, 40)
    half = [exit_time_tail(g, origin(g), r, 4000, RngStream(3), m_max=2).extra["half_life"] / r ** 2
            for r in (8.0, 16.0, 32.0)]
    assert max(half) / min(half) <= 2


# -- cut points --------------------------------------------------------------------------------

def test_cut_points_one_dimension_are_the_running_maxima():
    # on Z the cut points of the stopped path are the running maxima towards the exit side
    g = centered_grid(1, 40)
    for t in range(200):
        out = run_until(g, origin(g), StopSpec(radii=(((0.0,), 32.0),)), RngStream(4), trial=t)
        x = g.coords(np.asarray(out.path.vertices)).ravel()
        if x[-1] < 0:
            x = -x
        cut = [i for i, _ in cut_points(out.path)]
        expect = [i for i in range(x.size) if np.all(x[:i] <= x[i]) and np.all(x[i + 1:] > x[i])]
        assert len(cut) >= 1 and cut == expect


def test_cut_point_counts_nonnegative_one_dimension():
    g = centered_grid(1, 70)
    rep = cut_point_density(g, origin(g), origin(g), 16.0, 2000, RngStream(4))
    assert rep.extra["counts_min"] >= 0 and rep.rows()[0]["estimate"] > 0


def test_cut_points_grow_with_r_in_three_dimensions():
    g = centered_grid(3, 70)
    m = [cut_point_density(g, origin(g), origin(g), r, 600, RngStream(5)).rows()[0]["estimate"]
         for r in (4.0, 8.0, 16.0)]
    assert m[0] < m[1] < m[2]


def test_cut_point_start_guard():
    g = centered_grid(2, 40)
    with pytest.raises(EstimatorError):
        cut_point_density(g, g.id_of((5, 0)), origin(g), 8.0, 10, RngStream(0))


# -- interpolation -----------------------------------------------------------------------------

def test_interpolation_same_graph_no_deficit():
    scales = [16, 24]
    pairs = []
    for s in scales:
        g = grid_for(s)
        pairs.append((g, g))
    dom = UnitBox((0.25,) * 3, (0.75,) * 3)
    E = UnitBox((0.0, 0.0, 0.4), (1.0, 1.0, 1.0))
    rep = interpolation_consistency(pairs, dom, E, (0.5,) * 3, scales, 2000, RngStream(6), margin=lambda s: 0.0)
    for row in rep.rows():
        assert row["estimate"] <= 3 * row["stderr"] + 1e-12


def grid_for(s):
    from lerwlab.lattices import grid
    return grid(3, box=((0,) * 3, (s + 1,) * 3))


def test_interpolation_start_outside_domain():
    g = grid_for(16)
    dom = UnitBox((0.25,) * 3, (0.75,) * 3)
    with pytest.raises(EstimatorError):
        interpolation_consistency([(g, g)], dom, dom, (0.1,) * 3, [16], 10, RngStream(0))


# -- reproducibility ---------------------------------------------------------------------------

def test_reports_carry_seed_and_trials():
    g = centered_grid(3, 20)
    est = escape_probability(g, origin(g), HalfSpaceSpec((0, 0, 1), -2), [8, 12, 16], 500, RngStream(77))
    again = escape_probability(g, origin(g), HalfSpaceSpec((0, 0, 1), -2), [8, 12, 16], 500, RngStream(77))
    assert est.rows() == again.rows()
    assert est.seed == 77 and est.trials == 500
    assert all(row["stderr"] >= 0 for row in est.rows())


def test_cut_points_more_in_four_dimensions():
    m = []
    for dim in (3, 4):
        g = centered_grid(dim, 40)
        m.append(cut_point_density(g, origin(g), origin(g), 8.0, 1000, RngStream(9)).rows()[0]["estimate"])
    assert m[1] > m[0]
