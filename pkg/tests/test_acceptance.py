"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are repeated in the terminal summary under "acceptance criteria".
Tolerances are the stated ones; nothing here is loosened to make a run pass.
"""
import json
import math
import time
from collections import Counter
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest
from scipy import stats

from conftest import small_grid, tv_distance
from lerwlab.checks import bpp_sandwich, green_symmetry, random_instance, reversal_symmetry, time_symmetry
from lerwlab.cli import main
from lerwlab.coupling import CouplingConfig, couple_skeleton, coupling_tail
from lerwlab.estimators import (escape_probability, growth_exponent, isotropy_check, nonintersection_scaling,
                                quasi_loop_decay)
from lerwlab.graph import HalfSpaceSpec
from lerwlab.lattices import (PAIRS, StitchConfig, certify_lattice, grid, influence_region, restrict_edges,
                              rotated_lattice, stitched)
from lerwlab.oracle import OracleError, exact_lerw_law, stack_chain_law
from lerwlab.rng import RngStream
from lerwlab.walks import StopSpec, sample_paths

pytestmark = pytest.mark.acceptance

SEED = 2024


def origin(g):
    return g.id_of((0,) * g.dim)


@lru_cache(maxsize=None)
def growth_z3():
    g = grid(3, box=((-131,) * 3, (132,) * 3))
    t0 = time.perf_counter()
    est = growth_exponent(g, origin(g), [16, 32, 64, 128], 10 ** 4, RngStream(SEED), workers=1)
    return est, time.perf_counter() - t0


# 1 -----------------------------------------------------------------------------

def test_criterion_01_growth_exponent(criterion):
    est, secs = growth_z3()
    z1 = grid(1, box=((-70,), (71,)))
    one = growth_exponent(z1, origin(z1), [8, 16, 32, 64], 1000, RngStream(SEED))
    ok = 1.57 <= est.exponent <= 1.67 and secs <= 600 and abs(one.exponent - 1) <= 1e-3
    criterion(1, ok, f"Z^3 xi_hat = {est.exponent:.4f} +- {est.exponent_se:.4f} in {secs:.0f}s single-threaded; "
                     f"Z xi_hat = {one.exponent:.6f}")


# 2 -----------------------------------------------------------------------------

def test_criterion_02_exponent_bounds(criterion):
    est, _ = growth_z3()
    criterion(2, 1 < est.exponent <= 5 / 3, f"1 < {est.exponent:.4f} <= 5/3")


# 3 -----------------------------------------------------------------------------

def test_criterion_03_lerw_law_matches_oracle(criterion):
    g = small_grid(3, 3)
    centre = g.id_of((1, 1))
    corners = [g.id_of(c) for c in ((0, 0), (0, 2), (2, 0), (2, 2))]
    law = exact_lerw_law(g, centre, corners)
    n = 10 ** 5
    paths, _, _ = sample_paths(g, centre, StopSpec(absorbing=corners), n, RngStream(SEED))
    emp = Counter(tuple(int(x) for x in p) for p in paths)
    tv = tv_distance(law, {k: v / n for k, v in emp.items()})
    criterion(3, tv <= 0.02, f"TV = {tv:.4f} over {len(law)} exact paths, 1e5 walks")


# 4 -----------------------------------------------------------------------------

def test_criterion_04_conditioned_reversal(criterion):
    g = small_grid(4, 3)
    worst = 0.0
    cases = [(g, g.id_of((0, 0)), g.id_of((3, 2)), ()), (g, g.id_of((1, 1)), g.id_of((3, 0)), [g.id_of((0, 2))])]
    rng = np.random.default_rng(SEED)
    for _ in range(10):
        h = random_instance(rng, 6, 12)
        cases.append((h, 0, h.n - 1, ()))
    ok = True
    for h, b0, b1, A in cases:
        good, diff = reversal_symmetry(h, b0, b1, A)
        ok &= good
        worst = max(worst, diff)
    criterion(4, ok and worst <= 1e-10, f"{len(cases)} graphs with <= 12 vertices, max |difference| = {worst:g} "
                                        "(rational arithmetic)")


# 5 -----------------------------------------------------------------------------

def test_criterion_05_visit_count_stopping(criterion):
    g = small_grid(4, 3)
    v, w = g.id_of((1, 1)), g.id_of((3, 2))

    def law(n, forbidden=()):
        raw = stack_chain_law(g, v, count_vertex=w, n_visits=n, forbidden=forbidden)
        killed = raw.get(None, 0)
        out = {}
        for k, p in raw.items():
            if k is not None:
                out[k[0]] = out.get(k[0], 0) + p / (1 - killed)
        return out

    diffs = []
    for forbidden in ((), [g.id_of((2, 0))]):
        one = law(1, forbidden)
        for n in (2, 3):
            other = law(n, forbidden)
            keys = set(one) | set(other)
            diffs.append(max(abs(one.get(k, 0) - other.get(k, 0)) for k in keys))
    worst = float(max(diffs))
    criterion(5, worst <= 1e-10, f"12-vertex grid, T1 vs T2/T3 laws, with and without a forbidden set: "
                                 f"max |difference| = {worst:g}")


# 6 -----------------------------------------------------------------------------

def test_criterion_06_time_and_green_symmetry(criterion):
    rng = np.random.default_rng(SEED)
    bad_t = bad_g = 0
    for _ in range(50):
        g = random_instance(rng)
        perm = rng.permutation(g.n)
        S = np.sort(perm[: int(rng.integers(1, g.n))])
        A = np.sort(perm[: int(rng.integers(2, g.n + 1))])
        bad_g += green_symmetry(g, S)[1]
        bad_t += time_symmetry(g, A)[1]
    criterion(6, bad_t == 0 and bad_g == 0, f"50 random instances: {bad_t} time-symmetry and {bad_g} "
                                            "Green-symmetry mismatches (exact)")


# 7 -----------------------------------------------------------------------------

def test_criterion_07_bpp_sandwich(criterion):
    rng = np.random.default_rng(SEED)
    done = failed = 0
    worst = 0.0
    while done < 50:
        g = random_instance(rng, 5, 9)
        perm = rng.permutation(g.n)
        S = np.sort(perm[1:1 + int(rng.integers(1, g.n - 2))])
        try:
            ok, info = bpp_sandwich(g, int(perm[0]), [int(perm[-1])], S)
        except OracleError:
            continue  # target cut off from the source by the sink; draw another
        done += 1
        failed += not ok
        worst = max(worst, info["gap"])
    criterion(7, failed == 0, f"50 instances: {failed} outside [cap/2, cap] (tolerance 1e-8); "
                              f"worst capacity optimality gap {worst:.2g}")


# 8 -----------------------------------------------------------------------------

def test_criterion_08_lattice_certificates(criterion):
    lines, ok = [], True
    pure = [("Z3", grid(3, box=((-4,) * 3, (5,) * 3)).to_weighted(finite=False), None),
            ("2Z3", grid(3, 2, 2, box=((-8,) * 3, (9,) * 3)).to_weighted(finite=False), None),
            ("3Z3", grid(3, 3, 3, box=((-9,) * 3, (10,) * 3)).to_weighted(finite=False), None),
            ("rotated", rotated_lattice(((-20,) * 3, (21,) * 3)), None)]
    for name, g, _ in pure:
        rep = certify_lattice(g)
        ok &= rep.passed
        lines.append(f"{name}: {'ok' if rep.passed else 'violations'}")
    t0 = time.perf_counter()
    big = StitchConfig("z3-2z3", 16, 4, xi=f"random:{SEED}", alpha=Fraction(1, 2))
    rep = certify_lattice(stitched(big), sample=10 ** 4, cfg=big, seed=SEED)
    secs = time.perf_counter() - t0
    ok &= rep.passed and secs <= 60
    lines.append(f"z3-2z3 64^3 sample 1e4 in {secs:.0f}s: " + _violations(rep))
    for pair in sorted(PAIRS):
        if pair == "z3-2z3":
            continue
        k = PAIRS[pair][1]
        cfg = StitchConfig(pair, 12 if k == 3 else 8, 3, xi=f"random:{SEED}", alpha=Fraction(1))
        rep = certify_lattice(stitched(cfg), cfg=cfg)
        ok &= rep.passed
        lines.append(f"{pair} all vertices: " + _violations(rep))
    criterion(8, ok, "; ".join(lines))


def _violations(rep):
    bad = {f"{c}/{k}": n for (c, k), n in sorted(rep.violations.items()) if n}
    if not bad:
        return "0 violations"
    worst = ", ".join(f"{c} worst mean {x}" for c, x in sorted(rep.worst_mean.items()))
    return f"violations {bad} ({worst})"


# 9 -----------------------------------------------------------------------------

def test_criterion_09_stitch_consistency(criterion):
    ok = True
    for pair in ("z3-2z3", "z3-3z3"):
        dim, k, wk, _ = PAIRS[pair]
        L = 12 if k == 3 else 8
        for xi, spacing, weight in (("all1", 1, 1), ("all2", k, wk)):
            cfg = StitchConfig(pair, L, 2, xi=xi, margin=2 * k, alpha=Fraction(1))
            lo, hi = cfg.bounds()
            ref = grid(dim, spacing, weight, box=(lo, hi)).to_weighted(finite=True)
            ok &= restrict_edges(stitched(cfg), lo, hi - 1) == restrict_edges(ref, lo, np.asarray(hi) - 1)
    rng = np.random.default_rng(SEED)
    M, L = 3, 8
    base = StitchConfig("z3-2z3", L, M, alpha=Fraction(1))
    lo, hi = influence_region(base, np.ones(3), np.ones(3))
    lo, hi = [int(np.ceil(x)) for x in lo], [int(np.floor(x)) for x in hi]
    for _ in range(5):
        xa = rng.integers(1, 3, size=(M,) * 3)
        xb = rng.integers(1, 3, size=(M,) * 3)
        xb[1, 1, 1] = xa[1, 1, 1]
        ga = stitched(StitchConfig("z3-2z3", L, M, xi=xa.ravel().tolist(), alpha=Fraction(1)))
        gb = stitched(StitchConfig("z3-2z3", L, M, xi=xb.ravel().tolist(), alpha=Fraction(1)))
        ok &= restrict_edges(ga, lo, hi) == restrict_edges(gb, lo, hi)
    criterion(9, ok, "constant configurations equal the pure grids edge for edge; "
                     "5 random pairs agree on the influence region")


# 10 ----------------------------------------------------------------------------

def test_criterion_10_isotropy(criterion):
    z3 = grid(3, box=((-44,) * 3, (45,) * 3))
    dev = {r: isotropy_check(z3, origin(z3), float(r), 8, mode="exact").max_deviation for r in (10, 20, 40)}
    z2 = grid(2, box=((-14,) * 2, (15,) * 2))
    quad = isotropy_check(z2, origin(z2), 10.0, 4, mode="exact", solver="exact")
    exact_quarter = all(p == Fraction(1, 4) for p in quad.p)
    ok = dev[20] <= 0.02 and dev[40] <= dev[10] and exact_quarter
    criterion(10, ok, f"octant max deviation r=10: {dev[10]:.4f}, r=20: {dev[20]:.4f}, r=40: {dev[40]:.4f}; "
                      f"Z^2 quadrants at r=10 (rational) {[str(p) for p in quad.p]}")


# 11 ----------------------------------------------------------------------------

def test_criterion_11_coupling(criterion):
    g = grid(3, box=((-22,) * 3, (23,) * 3))
    cfg = CouplingConfig(alpha=2.0, K=1.0, levels=3)
    n = 10 ** 5
    run = couple_skeleton(g, origin(g), cfg, RngStream(SEED), n)  # raises on an acceptance outside [0, 1]
    acc_ok = bool(np.all((run.accept_prob >= 0) & (run.accept_prob <= 1)))
    pvals = []
    prev = np.repeat(run.start_pos[None], n, axis=0)
    for i, law in enumerate(run.laws):
        u = (run.bm_pos[:, i] - prev) / run.radii[i]
        prev = run.bm_pos[:, i]
        cnt = np.bincount([law.partition.cell_of(x) for x in u], minlength=law.D)
        pvals.append(stats.chisquare(cnt, law.areas * n).pvalue)
    rep, _ = coupling_tail(g, origin(g), cfg, [2, 4, 6, 8], 10 ** 4, RngStream(SEED + 1))
    freq = [row["estimate"] for row in rep.rows()]
    corr = rep.extra["corr_log_linear"]
    tail_ok = not math.isnan(corr) and corr <= -0.9
    ok = acc_ok and min(pvals) >= 0.01 and tail_ok
    criterion(11, ok, f"acceptance in [0,1]: {acc_ok}; chi^2 p per level {[round(p, 3) for p in pvals]}; "
                      f"tail frequencies at lambda 2,4,6,8: {freq}, correlation {corr}")


# 12 ----------------------------------------------------------------------------

def test_criterion_12_quasi_loops(criterion):
    g = grid(3, box=((-131,) * 3, (132,) * 3))
    box = ((-131,) * 3, (131,) * 3)
    est = quasi_loop_decay(g, box, origin(g), 0.4, [32, 64, 128], 2000, RngStream(SEED), delta_hat=0.1)
    dec = bool(np.all(np.diff(est.stat) < 0))
    criterion(12, dec, "mean QL at r=32,64,128: " + ", ".join(f"{m:.2f}+-{s:.2f}"
                                                            for m, s in zip(est.stat, est.stat_se)))


# 13 ----------------------------------------------------------------------------

def test_criterion_13_escape(criterion):
    g = grid(3, box=((-400,) * 3, (401,) * 3))
    H = HalfSpaceSpec((0.0, 0.0, 1.0), -4.0)
    ball = escape_probability(g, origin(g), H, [16, 32, 64], 20000, RngStream(SEED))
    ratio = ball.table["ratio"]
    band = float(ratio.max() / ratio.min())
    slab = escape_probability(g, origin(g), H, [16, 32, 64], 20000, RngStream(SEED + 1), variant="slab")
    z = np.abs(slab.stat - slab.table["closed_form"]) / slab.stat_se
    ok = band <= 4 and np.all(z <= 3)
    criterion(13, ok, f"ratio p*r/k = {np.round(ratio, 3).tolist()} (max/min {band:.2f}); "
                      f"slab |p - k/r|/se = {np.round(z, 2).tolist()}")


# 14 ----------------------------------------------------------------------------

def test_criterion_14_nonintersection(criterion):
    z1 = grid(1, box=((-70,), (71,)))
    one = nonintersection_scaling(z1, origin(z1), z1.id_of((1,)), [8, 16, 32, 64], 10 ** 6, RngStream(SEED))
    z3 = grid(3, box=((-67,) * 3, (68,) * 3))
    three = nonintersection_scaling(z3, origin(z3), z3.id_of((1, 0, 0)), [4, 8, 16, 32, 64], 20000,
                                    RngStream(SEED + 1))
    upper = float(three.table["upper95"][0])
    ok = abs(one.exponent - 2) <= 0.1 and upper < 1
    criterion(14, ok, f"d=1 exponent {one.exponent:.3f} +- {one.exponent_se:.3f}; "
                      f"d=3 exponent {three.exponent:.3f}, one-sided 95% upper bound {upper:.3f}")


# 15 ----------------------------------------------------------------------------

def test_criterion_15_interpolation(criterion, tmp_path, capsys):
    code = main(["interp", "--out", str(tmp_path), "--seed", str(SEED)])
    capsys.readouterr()
    rows = json.loads((tmp_path / "summary.json").read_text())["result"]["rows"]
    d = {r["parameter"]: (r["estimate"], r["stderr"]) for r in rows}
    within = all(est <= 3 * se for est, se in d.values())
    shrink = all(d[f"s=128;{x}"][0] <= d[f"s=64;{x}"][0] for x in ("G->G'", "G'->G"))
    ok = code == 0 and within and shrink
    criterion(15, ok, "deficits " + ", ".join(f"{k}: {v[0]:.4f} (se {v[1]:.4f})" for k, v in d.items()))


# 16 ----------------------------------------------------------------------------

REPRO = {
    "growth-xi": 'kind = "growth-xi"\ntrials = 1000\n[params]\nradii = [8, 16, 32]\n',
    "escape": 'kind = "escape"\ntrials = 2000\n',
    "coupling": 'kind = "coupling"\ntrials = 2000\n',
    "nonintersect": 'kind = "nonintersect"\ntrials = 2000\n[params]\nradii = [4, 8, 16]\n',
    "sample-lerw": 'kind = "sample-lerw"\ntrials = 200\n',
}


def test_criterion_16_reproducibility(criterion, tmp_path, capsys):
    mismatched = []
    for kind, text in REPRO.items():
        cfg = tmp_path / f"{kind}.toml"
        cfg.write_text(text)
        outs = []
        for i, workers in enumerate((1, 1, 4)):
            out = tmp_path / f"{kind}-{i}"
            assert main([kind, "--config", str(cfg), "--out", str(out), "--workers", str(workers)]) == 0
            outs.append(out)
        for f in sorted(p.name for p in outs[0].glob("*.csv")):
            if len({(o / f).read_bytes() for o in outs}) != 1:
                mismatched.append(f"{kind}/{f}")
    capsys.readouterr()
    criterion(16, not mismatched, f"{len(REPRO)} experiments, 3 runs each (workers 1, 1, 4): "
                                  f"{'all CSVs byte-identical' if not mismatched else mismatched}")
