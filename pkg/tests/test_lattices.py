from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lerwlab.graph import total_weight
from lerwlab.lattices import (PAIRS, ConfigError, StitchConfig, certify_lattice, classify_vertices, grid,
                              influence_region, moment_certificate, restrict_edges, rotated_lattice, stitched)


def grid_edges(dim, spacing, weight, lo, hi):
    g = grid(dim, spacing, weight, box=(lo, hi)).to_weighted(finite=True)
    return restrict_edges(g, lo, np.asarray(hi) - 1)


def third_moments_zero(mc):
    return all(x == 0 for x in mc.third.values())


def test_grid_degrees_and_weights():
    z = grid(3, box=((-2,) * 3, (3,) * 3))
    v = z.id_of((0, 0, 0))
    assert len(z.neighbors(v)) == 6
    z2 = grid(3, 2, 2, box=((-4,) * 3, (5,) * 3))
    assert total_weight(z2, z2.id_of((0, 0, 0)), exact=True) == 12
    z3 = grid(3, 3, 3, box=((-6,) * 3, (7,) * 3))
    assert total_weight(z3, z3.id_of((0, 0, 0)), exact=True) == 18


def test_moment_certificate_pure_grids():
    z = grid(3, box=((-2,) * 3, (3,) * 3)).to_weighted(finite=True)
    mc = moment_certificate(z, z.id_of((0, 0, 0)))
    assert mc.mean == (0, 0, 0)
    assert mc.second == tuple(tuple(Fraction(1, 3) if i == j else 0 for j in range(3)) for i in range(3))
    assert third_moments_zero(mc)
    z2 = grid(3, 2, 2, box=((-4,) * 3, (5,) * 3)).to_weighted(finite=True)
    mc2 = moment_certificate(z2, z2.id_of((0, 0, 0)))
    assert mc2.mean == (0, 0, 0)
    assert mc2.second[0][0] == Fraction(4, 3) and mc2.isotropic
    assert third_moments_zero(mc2)


def test_stitch_constraints():
    with pytest.raises(ConfigError, match="L must be an integer > 6"):
        StitchConfig("z3-2z3", 5, 1)
    with pytest.raises(ConfigError):
        StitchConfig("z3-2z3", 16, 4)  # 4 > 16^(1/9)
    StitchConfig("z3-2z3", 16, 4, alpha=Fraction(1, 2))
    StitchConfig("z3-2z3", 512, 2)  # 2 <= 512^(1/9) = 2, equality allowed
    with pytest.raises(ConfigError):
        StitchConfig("z3-2z3", 511, 2)
    with pytest.raises(ConfigError):
        StitchConfig("nope", 16, 1)


@pytest.mark.parametrize("pair", sorted(PAIRS))
def test_stitched_constant_configs_are_pure_grids(pair):
    dim, k, wk, _ = PAIRS[pair]
    L = 12 if k == 3 else 8
    for xi, spacing, weight in (("all1", 1, 1), ("all2", k, wk)):
        cfg = StitchConfig(pair, L, 2, xi=xi, margin=2 * k, alpha=Fraction(1))
        g = stitched(cfg)
        lo, hi = cfg.bounds()
        verts, edges = restrict_edges(g, lo, hi - 1)
        gverts, gedges = grid_edges(dim, spacing, weight, lo, hi)
        assert verts == gverts
        assert edges == gedges


def test_cross_edges_from_table():
    cfg = StitchConfig("z3-2z3", 8, 2, xi=[1, 2, 2, 1, 2, 1, 1, 2], alpha=Fraction(1))
    g = stitched(cfg)
    _, edges = restrict_edges(g, *cfg.bounds())
    _, _, wk, table = PAIRS["z3-2z3"]
    base = {w / h for w in table.values() for h in (1, 2)}
    # a fine/coarse pair reached from several tied anchors carries the sum of their entries
    sums = set(base)
    for _ in range(2):
        sums |= {a + b for a in sums for b in base}
    allowed = {Fraction(1), wk} | sums
    assert {w for _, _, w in edges} <= allowed


@given(st.integers(0, 2 ** 20))
@settings(max_examples=5, deadline=None)
def test_influence_region_agreement(seed):
    rng = np.random.default_rng(seed)
    M, L = 3, 8
    xa = rng.integers(1, 3, size=(M,) * 3)
    xb = rng.integers(1, 3, size=(M,) * 3)
    # agree on the block box [1, 1]^3 (the middle block) only
    xb[1, 1, 1] = xa[1, 1, 1]
    ga = stitched(StitchConfig("z3-2z3", L, M, xi=xa.ravel().tolist(), alpha=Fraction(1)))
    gb = stitched(StitchConfig("z3-2z3", L, M, xi=xb.ravel().tolist(), alpha=Fraction(1)))
    cfg = StitchConfig("z3-2z3", L, M, alpha=Fraction(1))
    lo, hi = influence_region(cfg, np.ones(3), np.ones(3))
    lo = [int(np.ceil(x)) for x in lo]
    hi = [int(np.floor(x)) for x in hi]
    assert restrict_edges(ga, lo, hi) == restrict_edges(gb, lo, hi)


def test_rotated_lattice():
    g = rotated_lattice(((0, 0, 0), (25, 25, 25)))
    assert g.n == 125
    big = rotated_lattice(((-15, -15, -15), (16, 16, 16)))
    o = int(np.flatnonzero(np.all(big.ipos == 0, axis=1))[0])
    assert len(big.neighbors(o)) == 6
    mc = moment_certificate(big, o)
    assert mc.mean == (0, 0, 0) and mc.isotropic and third_moments_zero(mc)


def test_pure_grid_certificate_passes():
    z = grid(3, box=((-4,) * 3, (5,) * 3)).to_weighted(finite=False)
    rep = certify_lattice(z)
    assert rep.passed and rep.checked > 0


def test_stitch_face_vertex_mean_zero():
    cfg = StitchConfig("z3-2z3", 16, 2, xi=[1, 2, 1, 2, 2, 1, 2, 1], alpha=Fraction(1))
    g = stitched(cfg)
    ok = np.flatnonzero(~g.frontier)
    cls = classify_vertices(g, ok, cfg)
    faces = ok[cls == "stitch-face"]
    assert faces.size > 0
    for v in faces[:: max(1, faces.size // 50)]:
        assert moment_certificate(g, int(v), cfg).mean_zero


def test_interior_vertices_of_stitched_graph_certified():
    cfg = StitchConfig("z3-2z3", 16, 2, xi="random:3", alpha=Fraction(1))
    g = stitched(cfg)
    rep = certify_lattice(g, sample=3000, cfg=cfg, seed=1)
    assert rep.violations[("interior", "mean")] == 0
    assert rep.violations[("interior", "second")] == 0
    assert rep.violations[("interior", "third")] == 0
    assert rep.violations.get(("stitch-face", "mean"), 0) == 0


def test_two_dim_pair_unit_weights():
    cfg = StitchConfig("z2-2z2", 8, 2, xi="all2", alpha=Fraction(1))
    g = stitched(cfg)
    assert set(np.unique(g.weights).tolist()) == {1.0}
