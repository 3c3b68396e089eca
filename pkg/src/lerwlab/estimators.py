"""Monte Carlo estimators and empirical checks.

Every estimator takes a graph, a start, its parameters, a trial count and
an RNG stream, and returns a report carrying (seed, trials, standard
errors).  Trials run through ``walks.run_trials`` so the numbers do not
depend on the worker count; floating point reductions are done once, in
trial order, on the concatenated per-trial arrays.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from . import _kernels as K
from .graph import GridGraph, HalfSpaceSpec, WeightedGraph, vertex_set
from .oracle import hitting_distribution
from .rng import as_stream
from .sphere import SpherePartition, assign_cells, sphere_partition, stopping_sphere
from .walks import default_cap, kernel_state, run_trials

Z95 = 1.6448536269514722  # one-sided 95% normal quantile


class EstimatorError(RuntimeError):
    pass


class CapExhausted(EstimatorError):
    """Too many trials hit the step cap for the estimate to be trusted."""


# -- shared helpers -----------------------------------------------------------

def loglog_fit(x, y):
    """Unweighted least squares of log y on log x: (slope, stderr, intercept)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise EstimatorError("a log-log fit needs at least 3 points")
    if np.any(y <= 0):
        raise EstimatorError("log-log fit of a non-positive statistic")
    res = stats.linregress(np.log(x), np.log(y))
    se = float(res.stderr) if np.isfinite(res.stderr) else 0.0
    return float(res.slope), se, float(res.intercept)


def _radii(radii, min_r=0.0):
    r = np.asarray(radii, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise EstimatorError("radii must be a non-empty list")
    if np.any(np.diff(r) <= 0):
        raise EstimatorError("radii must be strictly increasing")
    if r[0] < min_r:
        raise EstimatorError(f"radii must be at least {min_r}")
    return r


def _state(g, v):
    v = g.check_vertex(v)
    rel, x = kernel_state(g, v)
    return g.kernel_view(), v, rel, x


def _check_codes(codes, ok=(K.EXITED,), cap_limit=0.01, what="walk"):
    """Frontier stops are errors; step-cap stops above ``cap_limit`` abort."""
    codes = np.asarray(codes)
    if np.any(codes == K.FRONTIER):
        raise EstimatorError(f"{what} reached the frontier of the graph; enlarge the box")
    capped = int(np.sum(codes == K.CAPPED)) if K.CAPPED not in ok else 0
    if codes.size and capped / codes.size > cap_limit:
        raise CapExhausted(f"{capped} of {codes.size} trials exhausted the step cap")
    return capped


def _mean_se(a):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return math.nan, math.nan
    m = float(a.mean())
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return m, se


def _prob_se(p, n):
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n else math.nan


def _dist_to_point(g, v, p) -> float:
    return float(np.linalg.norm(g.pos[v] - np.asarray(p, dtype=float)))


# -- reports ------------------------------------------------------------------

@dataclass
class ExponentEstimate:
    """Per-radius statistic and its log-log slope.

    ``exponent`` is reported with the sign convention of the quantity named
    in ``name`` (growth: +slope; decay exponents: -slope)."""

    name: str
    radii: np.ndarray
    stat: np.ndarray
    stat_se: np.ndarray
    exponent: float
    exponent_se: float
    trials: int
    seed: int
    table: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        if self.radii.size < 3:
            raise EstimatorError("an exponent estimate needs at least 3 radii")
        if np.any(np.diff(self.radii) <= 0):
            raise EstimatorError("radii must be strictly increasing")

    def rows(self):
        out = [dict(parameter=f"r={_fmt(r)}", estimate=float(m), stderr=float(s), trials=self.trials,
                    seed=self.seed) for r, m, s in zip(self.radii, self.stat, self.stat_se)]
        out.append(dict(parameter="exponent", estimate=self.exponent, stderr=self.exponent_se,
                        trials=self.trials, seed=self.seed))
        return out

    def loglog(self):
        """Plot-ready (log r, log statistic) pairs."""
        ok = self.stat > 0
        return list(zip(np.log(self.radii[ok]).tolist(), np.log(self.stat[ok]).tolist()))

    def summary(self) -> dict:
        return dict(name=self.name, radii=self.radii.tolist(), stat=np.asarray(self.stat).tolist(),
                    stat_se=np.asarray(self.stat_se).tolist(), exponent=self.exponent,
                    exponent_se=self.exponent_se, trials=self.trials, seed=self.seed,
                    table={k: np.asarray(v).tolist() for k, v in self.table.items()}, notes=list(self.notes))


def _fmt(x):
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


@dataclass
class ProbEstimate:
    """A probability with its standard error and 95% Wilson interval."""

    name: str
    p: float
    stderr: float
    ci: tuple
    hits: int
    trials: int
    seed: int
    notes: list = field(default_factory=list)

    def rows(self):
        return [dict(parameter=self.name, estimate=self.p, stderr=self.stderr, trials=self.trials,
                     seed=self.seed)]

    def summary(self):
        return dict(name=self.name, p=self.p, stderr=self.stderr, ci=list(self.ci), hits=self.hits,
                    trials=self.trials, seed=self.seed, notes=list(self.notes))


def _prob_estimate(name, hits, n, seed, notes=()):
    p = hits / n
    ci = stats.binomtest(int(hits), int(n)).proportion_ci(0.95, method="wilson")
    return ProbEstimate(name, p, _prob_se(p, n), (float(ci.low), float(ci.high)), int(hits), int(n), seed,
                        list(notes))


@dataclass
class TableReport:
    """Generic estimator table: one row per parameter value."""

    name: str
    rows_: list
    trials: int
    seed: int
    extra: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def rows(self):
        return [dict(parameter=r["parameter"], estimate=r["estimate"], stderr=r["stderr"], trials=self.trials,
                     seed=self.seed) for r in self.rows_]

    def summary(self):
        return dict(name=self.name, rows=self.rows(), trials=self.trials, seed=self.seed,
                    extra=_jsonable(self.extra), notes=list(self.notes))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


# -- growth exponent ------------------------------------------------------------

def growth_exponent(g: WeightedGraph, start, radii, trials: int, rng, *, workers=None, cap=None,
                    min_trials: int = 1000) -> ExponentEstimate:
    """Fit of log E[len LE(R[0, T_r])] against log r.

    One walk per trial serves every radius (lengths are read off at the
    successive exit times), so the per-radius means are coupled."""
    r = _radii(radii, min_r=8)
    if trials < min_trials:
        raise EstimatorError(f"growth_exponent needs at least {min_trials} trials")
    stream = as_stream(rng)
    gv, start, rel, x = _state(g, start)
    cap = int(cap or default_cap(r[-1]))
    r2 = r * r

    def fn(keys):
        return K.growth_batch(gv, start, rel, x, x.copy(), r2, cap, keys)

    lens, codes = run_trials(fn, stream, trials, workers=workers)
    capped = _check_codes(codes, what="growth walk")
    ok = codes == K.EXITED
    means, ses = zip(*[_mean_se(lens[ok, j]) for j in range(r.size)])
    means, ses = np.array(means), np.array(ses)
    slope, se, _ = loglog_fit(r, means)
    notes = [f"capped trials excluded: {capped}"] if capped else []
    return ExponentEstimate("growth_xi", r, means, ses, slope, se, trials, stream.seed,
                            table={"used_trials": np.full(r.size, int(ok.sum()))}, notes=notes)


# -- quasi-loops ----------------------------------------------------------------

@dataclass
class QuasiLoopReport:
    s: float
    r: float
    spacing: float
    counts: np.ndarray
    mean: float
    stderr: float
    trials: int
    seed: int

    def rows(self):
        return [dict(parameter=f"s={_fmt(self.s)};r={_fmt(self.r)}", estimate=self.mean, stderr=self.stderr,
                     trials=self.trials, seed=self.seed)]


def quasi_loop_count(points, s: float, r: float, dim: int | None = None, origin=None) -> int:
    """Number of centres v of the grid origin + (s/dim) Z^dim such that two
    points of the sequence in the open ball B(v, s) are joined by a stretch
    of diameter >= r.  ``points`` is an (n, d) array of positions."""
    if s <= 0 or r <= 0:
        raise EstimatorError("quasi-loop parameters must be positive")
    P = np.ascontiguousarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    d = P.shape[1]
    if dim is not None and dim != d:
        raise EstimatorError("dim does not match the points")
    o = np.zeros(d) if origin is None else np.asarray(origin, dtype=float)
    return int(K.ql_count(P, float(s), float(r), o))


def quasi_loop_count_naive(points, s, r, dim=None, origin=None) -> int:
    """Direct scan over every grid centre; reference for ``quasi_loop_count``."""
    P = np.ascontiguousarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    o = np.zeros(P.shape[1]) if origin is None else np.asarray(origin, dtype=float)
    return int(K.ql_count_naive(P, float(s), float(r), o))


def path_points(g: WeightedGraph, path) -> np.ndarray:
    ids = np.asarray(getattr(path, "vertices", path), dtype=np.int64)
    return g.pos[ids] if not isinstance(g, GridGraph) else g.coords(ids).astype(float)


def quasi_loop_decay(g: WeightedGraph, box, start, eps: float, radii, trials: int, rng, *,
                     delta_hat: float = 0.1, workers=None, cap=None) -> ExponentEstimate:
    """Mean QL(r^(1-eps), r^(1-delta_hat), LE(R[0, T(B(start, r))])) per r.

    The grid of centres is anchored at the lower corner of ``box``; every
    ball B(start, r) must lie inside the box."""
    r = _radii(radii)
    if trials < 100:
        raise EstimatorError("quasi_loop_decay needs at least 100 trials")
    if not 0 < eps < 1 or not 0 < delta_hat < 1:
        raise EstimatorError("eps and delta_hat must lie in (0, 1) so that s < r")
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    stream = as_stream(rng)
    gv, start, rel, x = _state(g, start)
    if np.any(x - r[-1] < lo) or np.any(x + r[-1] > hi):
        raise EstimatorError("the largest ball is not inside the domain box")
    means, ses, ss, rq, used = [], [], [], [], []
    for j, R in enumerate(r):
        s = R ** (1 - eps)
        q = R ** (1 - delta_hat)
        capj = int(cap or default_cap(R))
        sub = stream.substream(j + 1)

        def fn(keys, R=R, s=s, q=q, capj=capj):
            c, lens, codes = K.ql_batch(gv, start, rel, x, x.copy(), R * R, capj, keys,
                                        np.array([s]), np.array([q]), lo)
            return c[:, 0], codes

        counts, codes = run_trials(fn, sub, trials, workers=workers)
        _check_codes(codes, what="quasi-loop walk")
        ok = codes == K.EXITED
        m, se = _mean_se(counts[ok])
        means.append(m)
        ses.append(se)
        ss.append(s)
        rq.append(q)
        used.append(int(ok.sum()))
    means, ses = np.array(means), np.array(ses)
    notes = []
    if np.all(means > 0):
        slope, se, _ = loglog_fit(r, means)
    else:
        slope, se = math.nan, math.nan
        notes.append("zero mean count at some radius; no fit")
    return ExponentEstimate("quasi_loops", r, means, ses, -slope, se, trials, stream.seed,
                            table={"s": np.array(ss), "r_ql": np.array(rq), "used_trials": np.array(used)},
                            notes=notes)


# -- non-intersection -------------------------------------------------------------

def nonintersection_scaling(g: WeightedGraph, v1, v2, radii, trials: int, rng, *, workers=None, cap=None,
                            bootstrap: int = 200) -> ExponentEstimate:
    """P(R1[0, T1_r] and R2[0, T2_r] are disjoint) per radius, T_r the exit
    time of B(v1, r), and the decay exponent -slope of its log-log fit.

    Both walks are shared across radii, so the probabilities are monotone in
    r.  ``exponent_se`` combines the fit residual error with a bootstrap
    over trials; ``table['upper95']`` is the one-sided 95% upper bound."""
    r = _radii(radii)
    stream = as_stream(rng)
    gv, s1, rel1, x1 = _state(g, v1)
    _, s2, rel2, x2 = _state(g, v2)
    sep = float(np.linalg.norm(x1 - x2))
    if np.any(r <= 2 * sep):
        raise EstimatorError("radii must exceed twice the distance between the starts")
    if s1 == s2:
        raise EstimatorError("the walks start at the same vertex: the probability is zero")
    cap = int(cap or default_cap(r[-1]))
    r2 = r * r

    def fn(k1, k2):
        return K.nonintersect_batch(gv, s1, rel1, x1, s2, rel2, x2, x1.copy(), r2, cap, k1, k2)

    first, codes = run_trials(fn, stream, trials, workers=workers, nkeys=2)
    capped = _check_codes(codes, what="non-intersection walk")
    ok = codes == K.EXITED
    surv = first[ok][:, None] > np.arange(r.size)[None, :]
    n = surv.shape[0]
    p = surv.mean(axis=0)
    se_p = np.array([_prob_se(q, n) for q in p])
    if np.any(p <= 0):
        raise EstimatorError("zero empirical non-intersection probability at some radius")
    slope, fit_se, _ = loglog_fit(r, p)
    gen = stream.substream(0xB007).generator()
    boot = []
    for _ in range(bootstrap):
        idx = gen.integers(0, n, n)
        q = surv[idx].mean(axis=0)
        if np.all(q > 0):
            boot.append(loglog_fit(r, q)[0])
    boot_se = float(np.std(boot, ddof=1)) if len(boot) > 1 else 0.0
    se = math.sqrt(fit_se ** 2 + boot_se ** 2)
    xi = -slope
    notes = [f"fit se {fit_se:.4g}, bootstrap se {boot_se:.4g}"]
    if capped:
        notes.append(f"capped trials excluded: {capped}")
    return ExponentEstimate("intersect_xi", r, p, se_p, xi, se, trials, stream.seed,
                            table={"upper95": np.full(r.size, xi + Z95 * se),
                                   "lower95": np.full(r.size, xi - Z95 * se)}, notes=notes)


# -- escape and Beurling ----------------------------------------------------------

def escape_probability(g: WeightedGraph, v, H: HalfSpaceSpec, radii, trials: int, rng, *,
                       variant: str = "ball", workers=None, cap=None) -> ExponentEstimate:
    """P(reach distance r before entering H) per radius, and p*r/d(v, dH).

    ``variant='slab'`` replaces the sphere by the plane at height r above
    dH; the normal projection is then a lazy gambler's ruin with exact
    answer k/r (k the start height), reported as ``closed_form``."""
    r = _radii(radii)
    stream = as_stream(rng)
    gv, v, rel, x = _state(g, v)
    k = H.distance(x)
    if H.contains(x):
        raise EstimatorError("the start lies inside H")
    if k < 1:
        raise EstimatorError("the start must be at distance >= 1 from the boundary of H")
    if variant == "ball" and np.any(r <= 2 * k):
        raise EstimatorError("radii must exceed twice the distance to H")
    if variant not in ("ball", "slab"):
        raise EstimatorError(f"unknown escape variant {variant!r}")
    cap = int(cap or default_cap(r[-1]))
    normal = np.asarray(H.normal, dtype=float)

    def fn(keys):
        return K.escape_batch(gv, v, rel, x, x.copy(), r, normal, float(H.offset), variant == "slab", cap, keys)

    esc, codes = run_trials(fn, stream, trials, workers=workers)
    _check_codes(codes, ok=(K.EXITED, K.HIT), what="escape walk")
    ok = codes != K.CAPPED
    n = int(ok.sum())
    p = np.array([(esc[ok] > j).mean() for j in range(r.size)])
    se = np.array([_prob_se(q, n) for q in p])
    ratio = p * r / k
    table = {"ratio": ratio, "ratio_se": se * r / k}
    if variant == "slab":
        table["closed_form"] = np.minimum(k / r, 1.0)
    if np.all(p > 0):
        slope, sse, _ = loglog_fit(r, p)
    else:
        slope, sse = math.nan, math.nan
    return ExponentEstimate(f"escape_{variant}", r, p, se, -slope, sse, trials, stream.seed, table=table,
                            notes=[f"distance to boundary {k:g}"])


def _connected(g, A) -> bool:
    A = vertex_set(A)
    if A.size <= 1:
        return True
    if isinstance(g, GridGraph):
        pts = [tuple(c) for c in g.coords(A).tolist()]
        S = set(pts)
        steps = [tuple(int(g.k) * s * int(i == a) for i in range(g.dim)) for a in range(g.dim) for s in (1, -1)]
        seen = {pts[0]}
        q = deque([pts[0]])
        while q:
            p = q.popleft()
            for st in steps:
                nb = tuple(a + b for a, b in zip(p, st))
                if nb in S and nb not in seen:
                    seen.add(nb)
                    q.append(nb)
        return len(seen) == len(S)
    S = set(A.tolist())
    seen = {int(A[0])}
    q = deque(seen)
    while q:
        p = q.popleft()
        for nb in g.neighbors(p):
            nb = int(nb)
            if nb in S and nb not in seen:
                seen.add(nb)
                q.append(nb)
    return len(seen) == len(S)


def beurling_hit(g: WeightedGraph, v, A, r: float, trials: int, rng, *, workers=None, cap=None) -> ProbEstimate:
    """P(R[0, T_{v,4r}] meets A) for a connected A crossing the annulus
    B(v, 2r) minus B(v, r).  Time 0 counts."""
    stream = as_stream(rng)
    gv, v, rel, x = _state(g, v)
    A = vertex_set(A)
    if A.size == 0 or not _connected(g, A):
        raise EstimatorError("A must be a non-empty connected set")
    P = g.coords(A).astype(float) if isinstance(g, GridGraph) else g.pos[A]
    d = np.linalg.norm(P - x, axis=1)
    if not (np.any(d < r) and np.any(d >= 2 * r)):
        raise EstimatorError("A must meet B(v, r) and the complement of B(v, 2r)")
    cap = int(cap or default_cap(4 * r))

    def fn(keys):
        return K.hit_before_exit_batch(gv, v, rel, x, A, x.copy(), (4.0 * r) ** 2, cap, keys)

    hit, codes = run_trials(fn, stream, trials, workers=workers)
    _check_codes(codes, ok=(K.EXITED, K.HIT), what="Beurling walk")
    ok = codes != K.CAPPED
    return _prob_estimate(f"beurling_r={_fmt(r)}", int(hit[ok].sum()), int(ok.sum()), stream.seed)


# -- isotropy -------------------------------------------------------------------------

@dataclass
class IsotropyReport:
    center: int
    r: float
    partition: SpherePartition
    stop_ids: np.ndarray
    cell_of: np.ndarray
    p: list
    areas: list
    deviations: list
    max_deviation: float
    mode: str
    trials: int | None = None
    seed: int | None = None
    stderr: list | None = None

    def check(self, tol=1e-9):
        """Invariants: probabilities and areas each sum to 1."""
        tp = sum(self.p, Fraction(0)) if isinstance(self.p[0], Fraction) else float(np.sum(self.p))
        return abs(float(tp) - 1.0) <= tol and abs(float(np.sum([float(a) for a in self.areas])) - 1.0) <= tol

    def rows(self):
        se = self.stderr or [0.0] * len(self.p)
        return [dict(parameter=f"r={_fmt(self.r)};cell={i}", estimate=float(self.deviations[i]),
                     stderr=float(se[i]), trials=self.trials or 0, seed=self.seed if self.seed is not None else 0)
                for i in range(len(self.p))]

    def summary(self):
        return dict(center=self.center, r=self.r, cells=self.partition.D, mode=self.mode,
                    p=_jsonable(self.p), areas=_jsonable(self.areas), deviations=_jsonable(self.deviations),
                    max_deviation=float(self.max_deviation), trials=self.trials, seed=self.seed)


def _local_graph(g, v, r):
    """Finite graph around v large enough for the radius-r stop, and v's id in it."""
    if isinstance(g, GridGraph):
        from .lattices import grid

        c = g.coords(v)
        m = int(math.ceil(r)) + 2 * int(g.k)
        sub = grid(g.dim, g.k, g.edge_weight, box=(tuple(c - m), tuple(c + m + 1)))
        w = sub.to_weighted(finite=True)
        return w, sub.id_of(c)
    return g, v


def isotropy_check(g: WeightedGraph, v, r: float, cells: int, mode: str = "exact", trials: int | None = None,
                   rng=None, *, assign: str = "plus", solver: str = "auto", workers=None) -> IsotropyReport:
    """Exit distribution from v on the radius-r stopping sphere, compared
    cell by cell with normalized surface area.

    Each stopping vertex is assigned to one cell by where its edges from the
    ball cross the sphere (first crossed cell, or the last one with
    ``assign='minus'``).  ``mode='exact'`` solves for the hitting
    distribution; ``mode='mc'`` samples ``trials`` exits."""
    v = g.check_vertex(v)
    lg, lv = _local_graph(g, v, r)
    center = lg.pos[lv].copy()
    part = sphere_partition(lg.dim, cells)
    _, stop = stopping_sphere(lg, center, r)
    if stop.size < cells:
        raise EstimatorError("fewer stopping vertices than cells")
    if np.any(lg.frontier[stop]):
        raise EstimatorError("the stopping sphere reaches the frontier of the graph")
    cell_of = assign_cells(lg, center, r, part, stop, mode=assign)
    counts = np.bincount(cell_of, minlength=cells)
    if np.any(counts == 0):
        raise EstimatorError("degenerate cells: some cell received no stopping vertex")
    if mode == "exact":
        hv = hitting_distribution(lg, lv, stop, mode=solver)
        exact = isinstance(hv.probs, list)
        pa = [Fraction(0) if exact else 0.0 for _ in range(cells)]
        lookup = hv.as_dict()
        for x, c in zip(stop, cell_of):
            pa[c] += lookup[int(x)]
        se = None
        seed = None
    elif mode == "mc":
        if not trials:
            raise EstimatorError("mc mode needs a trial count")
        stream = as_stream(rng)
        seed = stream.seed
        gv, _, rel, x = _state(lg, lv)
        cap = default_cap(r)
        starts = np.full(1, lv, np.int64)

        def fn(keys):
            T = keys.size
            return K.exits_from(gv, np.repeat(starts, T), np.repeat(rel[None], T, 0),
                                np.repeat(x[None], T, 0), float(r * r), cap, keys)

        ex, codes = run_trials(fn, stream, trials, workers=workers)
        _check_codes(codes, what="isotropy walk")
        pos = np.full(lg.n, -1, np.int64)
        pos[stop] = cell_of
        cc = pos[ex[codes == K.EXITED]]
        n = cc.size
        pa = (np.bincount(cc, minlength=cells) / n).tolist()
        se = [_prob_se(q, n) for q in pa]
        exact = False
    else:
        raise EstimatorError(f"unknown isotropy mode {mode!r}")
    if exact and lg.dim == 2:
        areas = [Fraction(1, cells)] * cells
    else:
        areas = part.areas.tolist()
    dev = [abs(p - a) if isinstance(p, Fraction) and isinstance(a, Fraction) else abs(float(p) - float(a))
           for p, a in zip(pa, areas)]
    mx = max(float(d) for d in dev)
    return IsotropyReport(v, float(r), part, stop, cell_of, pa, areas, dev, mx, mode, trials, seed, se)


def fit_isotropy(reports) -> tuple:
    """(K, alpha) with max deviation ~ K r^-alpha across reports."""
    r = np.array([rep.r for rep in reports], dtype=float)
    m = np.array([rep.max_deviation for rep in reports], dtype=float)
    if r.size < 2 or np.any(m <= 0):
        raise EstimatorError("need at least two radii with positive deviation")
    res = stats.linregress(np.log(r), np.log(m))
    return float(math.exp(res.intercept)), float(-res.slope)


# -- exit times ---------------------------------------------------------------------

def exit_time_tail(g: WeightedGraph, v, r: float, trials: int, rng, *, m_max: int = 8, workers=None) -> TableReport:
    """P(R[0, t] stays in B(v, r)) at t = m r^2, m = 0..m_max.

    ``extra`` carries the correlation of (m, log p) over m >= 1 and the
    median exit time (the half-life)."""
    if r < 4:
        raise EstimatorError("exit_time_tail needs r >= 4")
    stream = as_stream(rng)
    gv, v, rel, x = _state(g, v)
    tmax = int(math.ceil(m_max * r * r))

    def fn(keys):
        return K.exit_time_batch(gv, v, rel, x, x.copy(), float(r * r), tmax, keys)

    t, codes = run_trials(fn, stream, trials, workers=workers)
    _check_codes(codes, ok=(K.EXITED, K.CAPPED), what="exit-time walk")
    rows, ms, ps = [], [], []
    for m in range(m_max + 1):
        tt = m * r * r
        p = float((t > tt).mean())
        rows.append(dict(parameter=f"m={m}", estimate=p, stderr=_prob_se(p, trials), t=tt))
        ms.append(m)
        ps.append(p)
    ms, ps = np.array(ms[1:]), np.array(ps[1:])
    good = ps > 0
    corr = float(np.corrcoef(ms[good], np.log(ps[good]))[0, 1]) if good.sum() >= 3 else math.nan
    half = float(np.median(t))
    return TableReport("exit_time_tail", rows, trials, stream.seed,
                       extra=dict(r=r, corr_log_linear=corr, half_life=half, mean_exit_time=float(t.mean())))


# -- cut points ---------------------------------------------------------------------

def cut_point_density(g: WeightedGraph, w, v, r: float, trials: int, rng, *, workers=None, cap=None) -> TableReport:
    """Number of cut points of R[0, T_{v,4r}] (walk from w) in the annulus
    r <= |x - v| < 2r.

    Cut points are taken relative to the stopped path, a truncation of the
    infinite-horizon definition that can only enlarge the cut set."""
    stream = as_stream(rng)
    gv, w, rel, x = _state(g, w)
    _, v, _, xv = _state(g, v)
    if np.linalg.norm(x - xv) >= r / 2:
        raise EstimatorError("w must lie in B(v, r/2)")
    cap = int(cap or default_cap(4 * r))

    def fn(keys):
        return K.cut_annulus_batch(gv, w, rel, x, xv.copy(), float(r), 2.0 * r, 4.0 * r, cap, keys)

    cnt, codes = run_trials(fn, stream, trials, workers=workers)
    capped = _check_codes(codes, what="cut-point walk")
    ok = codes == K.EXITED
    m, se = _mean_se(cnt[ok])
    rows = [dict(parameter=f"r={_fmt(r)}", estimate=m, stderr=se)]
    return TableReport("cut_point_density", rows, trials, stream.seed,
                       extra=dict(counts_min=int(cnt[ok].min()) if ok.any() else 0, capped=capped),
                       notes=["cut points relative to the walk stopped at T_{v,4r}"])


# -- interpolation consistency ---------------------------------------------------

@dataclass(frozen=True)
class UnitBox:
    lo: tuple
    hi: tuple

    def dist(self, P, scale, margin=0.0):
        """Euclidean distance from points to the box scale*[lo, hi]."""
        lo = np.asarray(self.lo, dtype=float) * scale
        hi = np.asarray(self.hi, dtype=float) * scale
        gap = np.maximum(np.maximum(lo - P, P - hi), 0.0)
        return np.linalg.norm(gap, axis=-1)


def _le_inside(g, start, domain: UnitBox, E: UnitBox, s, margin, trials, stream, workers):
    """Fraction of walks whose loop erasure (walk stopped on leaving s*domain)
    stays within distance ``margin`` of s*E."""
    if isinstance(g, GridGraph):
        allpos = g.coords(np.arange(g.n)).astype(float)
    else:
        allpos = g.pos
    outside = domain.dist(allpos, s) > 0
    gv, start, rel, x = _state(g, start)
    if outside[start]:
        raise EstimatorError("start outside the domain")
    am = outside.astype(np.bool_)
    cap = default_cap(s)
    c = np.zeros((0, g.dim))
    r2 = np.zeros(0)

    def fn(keys):
        flat, offs, codes, steps = K.walk_batch(gv, start, rel, x, am, c, r2, cap, keys, True)
        inside = E.dist(allpos[flat], s) <= margin + 1e-9
        bad = np.add.reduceat((~inside).astype(np.int64), offs[:-1]) if flat.size else np.zeros(keys.size)
        return (bad == 0).astype(np.int64), codes

    ok, codes = run_trials(fn, stream, trials, workers=workers)
    _check_codes(codes, ok=(K.HIT,), what="interpolation walk")
    good = codes == K.HIT
    n = int(good.sum())
    p = float(ok[good].mean())
    return p, _prob_se(p, n), n


def interpolation_consistency(pairs, domain: UnitBox, E: UnitBox, start, scales, trials: int, rng, *,
                              margin=None, workers=None) -> TableReport:
    """For each scale s and graph pair (G, G'), compare P_G(LE in sE) with
    P_G'(LE in sE fattened by m(s)) in both directions.

    The deficit of one direction is max(0, P_G(E) - P_G'(E^m)); it should be
    within Monte Carlo error.  ``start`` is in unit coordinates (scaled by
    s, rounded to the nearest vertex of each graph); m(s) defaults to
    4 s^(3/4)."""
    from .graph import nearest_vertex

    stream = as_stream(rng)
    margin = margin or (lambda s: 4.0 * s ** 0.75)
    scales = list(scales)
    if len(pairs) != len(scales):
        raise EstimatorError("one graph pair per scale is required")
    a = np.asarray(start, dtype=float)
    if np.any(a < np.asarray(domain.lo)) or np.any(a > np.asarray(domain.hi)):
        raise EstimatorError("start outside domain")
    rows, extra = [], {}
    for j, (s, (g1, g2)) in enumerate(zip(scales, pairs)):
        m = float(margin(s))
        res = {}
        for gi, (name, g) in enumerate((("G", g1), ("G'", g2))):
            v = nearest_vertex(g, a * s)
            sub = stream.substream(1000 * j + 10 * gi + 1)
            p0 = _le_inside(g, v, domain, E, s, 0.0, trials, sub, workers)
            pm = _le_inside(g, v, domain, E, s, m, trials, stream.substream(1000 * j + 10 * gi + 2), workers)
            res[name] = (p0, pm)
        for direction, (a_, b_) in (("G->G'", ("G", "G'")), ("G'->G", ("G'", "G"))):
            p_plain, se1, _ = res[a_][0]
            p_fat, se2, _ = res[b_][1]
            deficit = max(0.0, p_plain - p_fat)
            se = math.sqrt(se1 ** 2 + se2 ** 2)
            rows.append(dict(parameter=f"s={_fmt(s)};{direction}", estimate=deficit, stderr=se))
        extra[f"s={_fmt(s)}"] = dict(margin=m, **{f"{k}_plain": v[0][0] for k, v in res.items()},
                                     **{f"{k}_fat": v[1][0] for k, v in res.items()})
    return TableReport("interpolation_consistency", rows, trials, stream.seed, extra=extra,
                       notes=["deficits are clipped at 0"])
