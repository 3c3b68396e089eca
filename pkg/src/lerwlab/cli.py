"""Command-line experiment runner.

    lerwlab <kind> --config FILE [--seed N] [--trials-scale X] [--out DIR] [--dump-paths]
    lerwlab list-experiments
    lerwlab validate --config FILE

Exit codes: 0 success, 1 other runtime error, 2 invalid config, 3 budget
or step cap exhausted, 4 a checked invariant failed.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import io
from .config import KINDS, ExperimentConfig, load_config, parse_config, stitch_config
from .coupling import CouplingConfig, CouplingError, InvariantError, coupling_tail
from .estimators import (CapExhausted, EstimatorError, UnitBox, beurling_hit, escape_probability, fit_isotropy, growth_exponent,
                         interpolation_consistency, isotropy_check, nonintersection_scaling, quasi_loop_decay)
from .graph import GraphError, GridGraph, HalfSpaceSpec, nearest_vertex
from .lattices import ConfigError, StitchConfig, centered_grid, certify_lattice, grid, rotated_lattice, stitched
from .oracle import BudgetExceeded
from .rng import RngStream
from .walks import StopSpec, sample_paths, tree_branch, wilson_ust

EXIT_CONFIG, EXIT_BUDGET, EXIT_INVARIANT = 2, 3, 4

DESCRIPTIONS = {
    "sample-lerw": "loop-erased walks from the start to a sphere; length table and optional path dump",
    "growth-xi": "growth exponent: mean LERW length against radius, log-log slope",
    "quasi-loops": "mean quasi-loop count of LERW across radii",
    "isotropy": "exit distribution on spheres against normalized cell areas",
    "nonintersect": "non-intersection probability of two walks and its decay exponent",
    "escape": "probability of reaching distance r before a half-space",
    "beurling": "probability that a walk meets a connected set crossing an annulus",
    "coupling": "walk / Brownian skeleton coupling and its deviation tail",
    "interp": "LERW event probabilities on Z^3 against a stitched graph, both directions",
    "ust": "uniform spanning tree branches via Wilson's algorithm",
    "certify": "exact step-moment certificate of a lattice",
    "oracle-suite": "exact identities on random small graphs",
}


class RunFailure(RuntimeError):
    """An experiment finished but a checked invariant failed."""


# -- graph construction ------------------------------------------------------

def _needed_half(cfg: ExperimentConfig) -> int:
    p, k = cfg.params, cfg.kind
    if k in ("growth-xi", "quasi-loops", "isotropy", "escape"):
        r = max(p["radii"])
    elif k == "nonintersect":
        r = max(p["radii"]) + float(np.linalg.norm(p["other"]))
    elif k == "sample-lerw":
        r = p["radius"]
    elif k == "beurling":
        r = max(4 * p["r"], float(np.abs(np.asarray(p["segment"], dtype=float)).max()))
    elif k == "coupling":
        r = float(np.sum(CouplingConfig(p["alpha"], p["K"], p["levels"]).radii())) + 2 * p["levels"]
    elif k == "ust":
        return int(p["half"])
    else:
        r = 8
    return int(math.ceil(r)) + 3


def build_graph(cfg: ExperimentConfig):
    """(graph, start vertex id, stitch config or None)."""
    gs = cfg.graph
    if gs["type"] == "grid":
        half = gs["half"] if gs["half"] is not None else _needed_half(cfg)
        g = centered_grid(gs["dim"], half, gs["spacing"], gs["weight"])
        start = cfg.start if cfg.start is not None else [0] * gs["dim"]
        return g, nearest_vertex(g, start), None
    if gs["type"] == "stitched":
        sc = stitch_config(gs)
        g = stitched(sc)
        lo, hi = sc.bounds()
    else:
        box = gs["box"]
        g = rotated_lattice((tuple(box[0]), tuple(box[1])))
        sc = None
        lo, hi = np.asarray(box[0]), np.asarray(box[1])
    start = cfg.start if cfg.start is not None else (np.asarray(lo) + np.asarray(hi)) / 2.0
    return g, nearest_vertex(g, start), sc


def _coords(g, v):
    return g.coords(v) if isinstance(g, GridGraph) else g.pos[v]


def _bounding_box(g):
    if isinstance(g, GridGraph):
        return g.first.astype(float), (g.first + (g.shape - 1) * g.k).astype(float)
    return g.pos.min(axis=0), g.pos.max(axis=0)


def _segment_vertices(g, a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    n = int(math.ceil(4 * np.linalg.norm(b - a))) + 1
    return np.unique([nearest_vertex(g, a + t * (b - a)) for t in np.linspace(0.0, 1.0, n)])


# -- experiments -------------------------------------------------------------
# each returns (tables {name: (rows, columns)}, summary dict, dumps {name: records})

def _exp_sample_lerw(cfg, g, v, sc, stream, dump):
    p = cfg.params
    c = tuple(float(x) for x in g.pos[v]) if not isinstance(g, GridGraph) else tuple(map(float, g.coords(v)))
    paths, codes, steps = sample_paths(g, v, StopSpec(radii=((c, p["radius"]),)), cfg.trials, stream,
                                       erase=p["erase"], workers=cfg.workers)
    lens = np.array([len(q) - 1 for q in paths], dtype=float)
    m, se = float(lens.mean()), float(lens.std(ddof=1) / math.sqrt(lens.size)) if lens.size > 1 else 0.0
    rows = [dict(parameter=f"r={p['radius']:g};length", estimate=m, stderr=se, trials=cfg.trials, seed=cfg.seed),
            dict(parameter=f"r={p['radius']:g};steps", estimate=float(np.mean(steps)),
                 stderr=float(np.std(steps, ddof=1) / math.sqrt(len(steps))) if len(steps) > 1 else 0.0,
                 trials=cfg.trials, seed=cfg.seed)]
    dumps = {}
    if dump:
        dumps["paths"] = [dict(trial=t, code=int(codes[t]), path=[list(map(float, _coords(g, int(x)))) for x in q])
                          for t, q in enumerate(paths)]
    return {"lerw_lengths": (rows, io.TABLE_COLUMNS)}, dict(mean_length=m, stderr=se), dumps


def _exponent_tables(name, est):
    return {name: (est.rows(), io.TABLE_COLUMNS),
            f"{name}_loglog": ([dict(log_r=a, log_stat=b) for a, b in est.loglog()], ("log_r", "log_stat"))}


def _exp_growth(cfg, g, v, sc, stream, dump):
    est = growth_exponent(g, v, cfg.params["radii"], cfg.trials, stream, workers=cfg.workers)
    tables = _exponent_tables("growth_xi", est)
    tables["growth_xi_fit"] = ([dict(xi_hat=est.exponent, stderr=est.exponent_se, trials=est.trials,
                                     seed=est.seed)], ("xi_hat", "stderr", "trials", "seed"))
    return tables, est.summary(), {}


def _exp_quasi(cfg, g, v, sc, stream, dump):
    p = cfg.params
    est = quasi_loop_decay(g, _bounding_box(g), v, p["eps"], p["radii"], cfg.trials, stream,
                           delta_hat=p["delta_hat"], workers=cfg.workers)
    s = est.summary()
    s["strictly_decreasing"] = bool(np.all(np.diff(est.stat) < 0))
    return _exponent_tables("quasi_loops", est), s, {}


def _exp_isotropy(cfg, g, v, sc, stream, dump):
    p = cfg.params
    reps = [isotropy_check(g, v, r, p["cells"], mode=p["mode"], trials=cfg.trials or None,
                           rng=stream.substream(j + 1), assign=p["assign"], workers=cfg.workers)
            for j, r in enumerate(p["radii"])]
    rows = [row for rep in reps for row in rep.rows()]
    for row in rows:
        if p["mode"] == "exact":
            row["seed"] = cfg.seed
    summ = dict(reports=[rep.summary() for rep in reps], max_deviation=[float(rep.max_deviation) for rep in reps])
    try:
        summ["K"], summ["alpha"] = fit_isotropy(reps)
    except Exception as e:  # too few radii or an exact zero deviation
        summ["fit_note"] = str(e)
    if not all(rep.check() for rep in reps):
        raise InvariantError("isotropy probabilities or areas do not sum to 1")
    return {"isotropy": (rows, io.TABLE_COLUMNS)}, summ, {}


def _exp_nonintersect(cfg, g, v, sc, stream, dump):
    p = cfg.params
    v2 = nearest_vertex(g, np.asarray(_coords(g, v), dtype=float) + np.asarray(p["other"], dtype=float))
    if v2 == v:
        raise ConfigError("params.other must move the second start to another vertex")
    est = nonintersection_scaling(g, v, v2, p["radii"], cfg.trials, stream, workers=cfg.workers)
    return _exponent_tables("nonintersection", est), est.summary(), {}


def _exp_escape(cfg, g, v, sc, stream, dump):
    p = cfg.params
    nrm = np.asarray(p["normal"], dtype=float)
    H = HalfSpaceSpec(tuple(nrm / np.linalg.norm(nrm)), p["offset"])
    est = escape_probability(g, v, H, p["radii"], cfg.trials, stream, variant=p["variant"], workers=cfg.workers)
    rows = est.rows()
    for j, r in enumerate(est.radii):
        rows.append(dict(parameter=f"r={r:g};ratio", estimate=float(est.table["ratio"][j]),
                         stderr=float(est.table["ratio_se"][j]), trials=cfg.trials, seed=cfg.seed))
    t = _exponent_tables("escape", est)
    t["escape"] = (rows, io.TABLE_COLUMNS)
    return t, est.summary(), {}


def _exp_beurling(cfg, g, v, sc, stream, dump):
    p = cfg.params
    a, b = p["segment"]
    A = _segment_vertices(g, a, b)
    est = beurling_hit(g, v, A, p["r"], cfg.trials, stream, workers=cfg.workers)
    return {"beurling": (est.rows(), io.TABLE_COLUMNS)}, est.summary(), {}


def _exp_coupling(cfg, g, v, sc, stream, dump):
    p = cfg.params
    cc = CouplingConfig(p["alpha"], p["K"], p["levels"], p["inner"], p["inner_trials"])
    rep, run = coupling_tail(g, v, cc, p["lambdas"], cfg.trials, stream, workers=cfg.workers)
    rows = [dict(r, trials=cfg.trials, seed=cfg.seed) for r in rep.rows()]
    lv = [dict(parameter=f"level={j + 1};{name}", estimate=float(val), stderr=0.0, trials=cfg.trials, seed=cfg.seed)
          for j in range(len(run.radii))
          for name, val in (("r", run.radii[j]), ("D", run.D[j]), ("eta", run.eta[j]),
                            ("acceptance", run.accepted[:, j].mean()))]
    dumps = {}
    if dump:
        dumps["skeletons"] = [dict(trial=t, **rec) for t in range(min(run.trials, 1000))
                              for rec in run.skeleton(t).records()]
    return {"coupling_tail": (rows, io.TABLE_COLUMNS), "coupling_levels": (lv, io.TABLE_COLUMNS)}, rep.summary(), dumps


def _exp_interp(cfg, g, v, sc, stream, dump):
    from fractions import Fraction

    p = cfg.params
    domain = UnitBox(tuple(p["domain"][0]), tuple(p["domain"][1]))
    E = UnitBox(tuple(p["target"][0]), tuple(p["target"][1]))
    pairs = []
    for s, M, a in zip(p["scales"], p["M"], p["alpha"]):
        hi = int(math.ceil(s * max(domain.hi))) + 3
        g1 = grid(3, box=((-3,) * 3, (hi,) * 3))
        scfg = StitchConfig(p["pair"], p["L"], int(M), xi=p["xi"], alpha=Fraction(str(a)))
        if scfg.L * scfg.M < s * max(domain.hi):
            raise ConfigError(f"stitched region L*M={scfg.L * scfg.M} does not cover the domain at scale {s}")
        pairs.append((g1, stitched(scfg)))
    coef, power = p["margin_coef"], p["margin_power"]
    rep = interpolation_consistency(pairs, domain, E, p["point"], p["scales"], cfg.trials, stream,
                                    margin=lambda s: coef * s ** power, workers=cfg.workers)
    rows = [dict(r, trials=cfg.trials, seed=cfg.seed) for r in rep.rows()]
    return {"interpolation": (rows, io.TABLE_COLUMNS)}, rep.summary(), {}


def _exp_ust(cfg, g, v, sc, stream, dump):
    if isinstance(g, GridGraph):
        g = g.to_weighted(finite=True)
        lo, hi = g.pos.min(axis=0), g.pos.max(axis=0)
        root = np.flatnonzero(np.any((g.pos == lo) | (g.pos == hi), axis=1))
    else:
        root = np.flatnonzero(g.frontier)
    if root.size == 0:
        raise ConfigError("ust needs a boundary to wire the tree to")
    lens, dumps = [], []
    for t in range(cfg.trials):
        parent = wilson_ust(g, root, stream, trial=t)
        br = tree_branch(parent, v)
        lens.append(len(br) - 1)
        if dump:
            dumps.append(dict(trial=t, branch=[list(map(float, g.pos[x])) for x in br]))
    lens = np.asarray(lens, dtype=float)
    m = float(lens.mean())
    se = float(lens.std(ddof=1) / math.sqrt(lens.size)) if lens.size > 1 else 0.0
    rows = [dict(parameter="branch_length", estimate=m, stderr=se, trials=cfg.trials, seed=cfg.seed)]
    return {"ust_branch": (rows, io.TABLE_COLUMNS)}, dict(mean_branch_length=m, stderr=se), \
        ({"branches": dumps} if dump else {})


def _exp_certify(cfg, g, v, sc, stream, dump):
    rep = certify_lattice(g, sample=cfg.params["sample"], cfg=sc, seed=cfg.seed)
    cols = ("class", "vertices", "mean_violations", "isotropy_violations", "third_violations", "worst_mean")
    summ = dict(checked=rep.checked, skipped_frontier=rep.skipped_frontier, by_class=rep.by_class,
                violations={f"{c}:{k}": n for (c, k), n in rep.violations.items()},
                worst_mean={c: str(x) for c, x in rep.worst_mean.items()}, passed=rep.passed)
    out = ({"certificate": (list(rep.rows()), cols)}, summ, {})
    if not rep.passed:
        raise RunFailure(out)
    return out


def _exp_oracle(cfg, g, v, sc, stream, dump):
    from .checks import oracle_suite

    res = oracle_suite(cfg.params["instances"], cfg.seed)
    cols = ("check", "passed", "failed", "skipped")
    rows = [dict(check=k, **c) for k, c in res.items()]
    out = ({"oracle_suite": (rows, cols)}, dict(results=res), {})
    if any(c["failed"] for c in res.values()):
        raise RunFailure(out)
    return out


RUNNERS = {
    "sample-lerw": _exp_sample_lerw, "growth-xi": _exp_growth, "quasi-loops": _exp_quasi,
    "isotropy": _exp_isotropy, "nonintersect": _exp_nonintersect, "escape": _exp_escape,
    "beurling": _exp_beurling, "coupling": _exp_coupling, "interp": _exp_interp, "ust": _exp_ust,
    "certify": _exp_certify, "oracle-suite": _exp_oracle,
}

NO_GRAPH = ("interp", "oracle-suite")


def _write(out, cfg, tables, summary, dumps, status):
    for name, (rows, cols) in tables.items():
        io.write_csv(os.path.join(out, f"{name}.csv"), rows, cols)
    for name, recs in dumps.items():
        io.write_ndjson(os.path.join(out, f"{name}.ndjson"), recs)
    io.write_json(os.path.join(out, "summary.json"),
                  dict(config=cfg.resolved(), status=status, result=summary, tables=sorted(tables)))


def run(cfg: ExperimentConfig, out: str, dump_paths: bool = False, log=print) -> int:
    """Run one validated experiment, writing its artifacts under ``out``."""
    stream = RngStream(cfg.seed)
    t0 = time.perf_counter()
    try:
        if cfg.kind in NO_GRAPH:
            g, v, sc = None, None, None
        else:
            g, v, sc = build_graph(cfg)
        tables, summary, dumps = RUNNERS[cfg.kind](cfg, g, v, sc, stream, dump_paths)
        status = 0
    except RunFailure as e:
        tables, summary, dumps = e.args[0]
        status = EXIT_INVARIANT
    except (ConfigError, CouplingError) as e:
        if isinstance(e, InvariantError):
            log(f"invariant violated: {e}", file=sys.stderr)
            return EXIT_INVARIANT
        log(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BudgetExceeded, CapExhausted) as e:
        log(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except (EstimatorError, GraphError, ValueError) as e:
        log(f"error: {e}", file=sys.stderr)
        return 1
    _write(out, cfg, tables, summary, dumps, status)
    log(f"wrote {', '.join(sorted(tables))} to {out} in {time.perf_counter() - t0:.1f}s")
    if status == EXIT_INVARIANT:
        log("invariant check failed; see summary.json", file=sys.stderr)
    return status


def _parser():
    ap = argparse.ArgumentParser(prog="lerwlab", description="Loop-erased random walk experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list-experiments", help="list experiment kinds")
    v = sub.add_parser("validate", help="check a config file without running it")
    v.add_argument("--config", required=True)
    for k in KINDS:
        p = sub.add_parser(k, help=DESCRIPTIONS[k])
        p.add_argument("--config", help="TOML config (defaults used when omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials-scale", type=float, default=1.0)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        p.add_argument("--dump-paths", action="store_true")
    return ap


def _err(msg):
    print(msg, file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-experiments":
        for k in KINDS:
            print(f"{k:14s} {DESCRIPTIONS[k]}")
        return 0
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(json.dumps(io.to_jsonable(cfg.resolved()), indent=2, sort_keys=True))
            return 0
        cfg = load_config(args.config, args.command) if args.config else parse_config({}, args.command)
        if args.seed is not None:
            cfg = parse_config({**cfg.resolved(), "seed": args.seed}, args.command)
        if args.workers is not None:
            cfg.workers = args.workers
        cfg = cfg.scaled(args.trials_scale)
        if args.out:
            cfg.out = args.out
        if cfg.graph["type"] == "grid" and cfg.graph["half"] is None and cfg.kind not in NO_GRAPH:
            cfg.graph["half"] = _needed_half(cfg)
    except ConfigError as e:
        _err(f"config error: {e}")
        return EXIT_CONFIG
    out = cfg.out or os.path.join("runs", cfg.kind)
    print(json.dumps(io.to_jsonable(cfg.resolved()), indent=2, sort_keys=True))

    def log(msg, file=sys.stdout):
        print(msg, file=file)

    return run(cfg, out, args.dump_paths, log)


if __name__ == "__main__":
    sys.exit(main())
