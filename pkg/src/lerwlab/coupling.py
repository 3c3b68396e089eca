"""Exit-skeleton coupling of a graph walk with Brownian motion.

Level i uses the ball of radius r_i = i^(4/alpha) around the previous exit
point, split into D_i = floor(r_i^(alpha/2)) + 4 cells.  The walk exits in
cell delta; a coin with success probability eta_i |delta| / p_{i,delta}
decides whether the Brownian exit point is drawn from the same cell
(success) or from the whole sphere, which keeps the Brownian exit exactly
uniform.  Only exit points are simulated.
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numba as nb
import numpy as np

from . import _kernels as K
from .graph import GridGraph, WeightedGraph
from .oracle import hitting_distribution
from .rng import as_stream, draw_uniform
from .sphere import SpherePartition, assign_cells, sphere_partition, stopping_sphere
from .walks import default_cap, kernel_state, run_trials

EXACT_BALL_MAX = 5000


class CouplingError(RuntimeError):
    pass


class InvariantError(CouplingError):
    """A construction invariant was violated (hard failure)."""


@dataclass(frozen=True)
class CouplingConfig:
    alpha: float
    K: float = 1.0
    levels: int = 3
    inner: str = "exact"
    inner_trials: int = 20000
    exact_ball_max: int = EXACT_BALL_MAX

    def __post_init__(self):
        if not self.alpha > 0:
            raise CouplingError("alpha must be positive")
        if self.levels < 1:
            raise CouplingError("levels must be at least 1")
        if self.K <= 0:
            raise CouplingError("K must be positive")
        if self.inner not in ("exact", "mc"):
            raise CouplingError("inner mode must be 'exact' or 'mc'")

    def radii(self) -> np.ndarray:
        return np.array([i ** (4.0 / self.alpha) for i in range(1, self.levels + 1)])

    def cells(self) -> np.ndarray:
        return np.array([math.floor(r ** (self.alpha / 2.0) + 1e-12) + 4 for r in self.radii()], dtype=np.int64)


@dataclass
class LevelLaw:
    """Exit law of one level, summarized by cell."""

    level: int
    r: float
    D: int
    partition: SpherePartition
    p: np.ndarray
    p_exact: list | None
    p_se: np.ndarray | None
    areas: np.ndarray
    eta: float
    mode: str
    lookup: object  # offset -> cell (grids) or vertex -> cell


# -- compiled pieces -------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def skeleton_walks(gv, start, rel0, x0, radii2, cap, keys):
    """Exit vertex of every level: level i walks from the previous exit
    until distance >= r_i from it."""
    T = keys.size
    L = radii2.size
    out = np.empty((T, L), np.int64)
    codes = np.zeros(T, np.int64)
    d = x0.size
    c = np.empty(d)
    for i in range(T):
        rel = rel0.copy()
        x = x0.copy()
        v = start
        t = 0
        code = K.EXITED
        if K._is_frontier(gv, v, rel):
            code = K.FRONTIER
        for lv in range(L):
            if code != K.EXITED:
                out[i, lv] = -1
                continue
            for a in range(d):
                c[a] = x[a]
            while K._dist2(x, c) < radii2[lv]:
                if t >= cap:
                    code = K.CAPPED
                    break
                v, fr = K._step(gv, v, x, rel, draw_uniform(keys[i], t))
                t += 1
                if fr and K._dist2(x, c) < radii2[lv]:
                    code = K.FRONTIER
                    break
            out[i, lv] = v if code == K.EXITED else -1
        codes[i] = code
    return out, codes


@nb.njit(inline="always")
def _normal_pair(key, ctr):
    u1 = draw_uniform(key, ctr)
    u2 = draw_uniform(key, ctr + 1)
    rad = math.sqrt(-2.0 * math.log(1.0 - u1))
    return rad * math.cos(2 * math.pi * u2), rad * math.sin(2 * math.pi * u2)


@nb.njit(cache=True)
def _cell_of_tri(tris, p):
    for j in range(tris.shape[0]):
        a = tris[j, 0]
        b = tris[j, 1]
        c = tris[j, 2]
        s1 = (a[1] * b[2] - a[2] * b[1]) * p[0] + (a[2] * b[0] - a[0] * b[2]) * p[1] + (a[0] * b[1] - a[1] * b[0]) * p[2]
        s2 = (b[1] * c[2] - b[2] * c[1]) * p[0] + (b[2] * c[0] - b[0] * c[2]) * p[1] + (b[0] * c[1] - b[1] * c[0]) * p[2]
        s3 = (c[1] * a[2] - c[2] * a[1]) * p[0] + (c[2] * a[0] - c[0] * a[2]) * p[1] + (c[0] * a[1] - c[1] * a[0]) * p[2]
        if s1 >= -1e-12 and s2 >= -1e-12 and s3 >= -1e-12:
            return j
    return -1


@nb.njit(cache=True, nogil=True)
def sample_directions(dim, D, tris, cells, keys, ctr0):
    """Per trial: a uniform direction in cell ``cells[i]`` (or on the whole
    sphere when it is -1), from counter-based draws starting at ``ctr0``."""
    T = keys.size
    out = np.empty((T, dim))
    p = np.empty(3)
    for i in range(T):
        ctr = ctr0
        if dim == 2:
            u = draw_uniform(keys[i], ctr)
            if cells[i] >= 0:
                th = (cells[i] + u) / D * 2 * math.pi
            else:
                th = u * 2 * math.pi
            out[i, 0] = math.cos(th)
            out[i, 1] = math.sin(th)
            continue
        while True:
            z0, z1 = _normal_pair(keys[i], ctr)
            z2, _ = _normal_pair(keys[i], ctr + 2)
            ctr += 4
            n = math.sqrt(z0 * z0 + z1 * z1 + z2 * z2)
            if n < 1e-12:
                continue
            p[0] = z0 / n
            p[1] = z1 / n
            p[2] = z2 / n
            if cells[i] < 0 or _cell_of_tri(tris, p) == cells[i]:
                break
        out[i, 0] = p[0]
        out[i, 1] = p[1]
        out[i, 2] = p[2]
    return out


# -- per-level exit laws ------------------------------------------------------------

class _LawCache:
    """Read-mostly memo of level laws keyed by ball shape class."""

    def __init__(self):
        self._d = {}
        self._lock = threading.Lock()

    def get(self, key, build):
        hit = self._d.get(key)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._d.get(key)
            if hit is None:
                hit = build()
                self._d = {**self._d, key: hit}
            return hit


_CACHE = _LawCache()


def level_law(g: WeightedGraph, center, level: int, r: float, D: int, cfg: CouplingConfig, rng=None) -> LevelLaw:
    """Cell probabilities p_{i,delta} of the exit from B(center, r)."""
    from .estimators import _local_graph

    key = ("grid", g.dim, float(g.k), float(r), D, cfg) if isinstance(g, GridGraph) \
        else (id(g), int(center), float(r), D, cfg)

    def build():
        lg, lv = _local_graph(g, center, r)
        c = lg.pos[lv].copy()
        part = sphere_partition(lg.dim, D)
        S, stop = stopping_sphere(lg, c, r)
        if np.any(lg.frontier[stop]):
            raise CouplingError("the level ball reaches the frontier of the graph")
        cell = assign_cells(lg, c, r, part, stop)
        areas = part.areas
        n_inside = S.size
        p_exact = None
        se = None
        if cfg.inner == "exact" and n_inside <= cfg.exact_ball_max:
            hv = hitting_distribution(lg, lv, stop)
            probs = hv.probs
            if isinstance(probs, list):
                pe = [Fraction(0)] * D
                for x, q in zip(probs, cell):
                    pe[q] += x
                p_exact = pe
                p = np.array([float(x) for x in pe])
            else:
                p = np.bincount(cell, weights=np.asarray(probs), minlength=D)
            mode = "exact"
        else:
            stream = as_stream(rng if rng is not None else 0).substream(0xC0FFEE + level)
            gv = lg.kernel_view()
            rel, x = kernel_state(lg, lv)
            n = cfg.inner_trials

            def fn(keys):
                T = keys.size
                return K.exits_from(gv, np.full(T, lv, np.int64), np.repeat(rel[None], T, 0),
                                    np.repeat(x[None], T, 0), float(r * r), default_cap(r), keys)

            ex, codes = run_trials(fn, stream, n, workers=1)
            if np.any(codes != K.EXITED):
                raise CouplingError("inner Monte Carlo walk did not exit cleanly")
            pos = np.full(lg.n, -1, np.int64)
            pos[stop] = cell
            p = np.bincount(pos[ex], minlength=D) / n
            se = np.sqrt(p * (1 - p) / n)
            mode = "mc"
        total = sum(p_exact, Fraction(0)) if p_exact is not None else float(p.sum())
        if p_exact is not None and total != 1 and abs(float(total) - 1) > 1e-12:
            raise InvariantError("exit probabilities do not sum to 1")
        if abs(float(total) - 1.0) > 1e-9:
            raise InvariantError(f"exit probabilities sum to {float(total)!r}")
        eta = float(np.min(p / areas))
        if isinstance(g, GridGraph):
            m = int(math.ceil(r)) + 2 * int(g.k)
            offs = (lg.ipos[stop] - lg.ipos[lv]) // int(g.k)
            mk = m // int(g.k) + 1
            lookup = np.full((2 * mk + 1,) * g.dim, -1, np.int64)
            lookup[tuple((offs + mk).T)] = cell
            lookup = (mk, lookup)
        else:
            lookup = dict(zip(stop.tolist(), cell.tolist()))
        return LevelLaw(level, float(r), D, part, p, p_exact, se, areas, eta, mode, lookup)

    return _CACHE.get(key, build)


def _cells_of_exits(g, law: LevelLaw, prev, ex):
    if isinstance(g, GridGraph):
        mk, tab = law.lookup
        offs = (g.coords(ex) - g.coords(prev)) // int(g.k) + mk
        return tab[tuple(offs.T)]
    return np.array([law.lookup.get(int(x), -1) for x in ex], dtype=np.int64)


def _max_edge_length(g) -> float:
    if isinstance(g, GridGraph):
        return float(g.k)
    src = np.repeat(np.arange(g.n), np.diff(g.indptr))
    return float(np.sqrt(((g.pos[src] - g.pos[g.indices]) ** 2).sum(axis=1)).max())


# -- skeletons ------------------------------------------------------------------------

@dataclass
class CouplingSkeleton:
    """One trial's skeleton."""

    radii: np.ndarray
    D: np.ndarray
    walk_exit: np.ndarray      # vertex ids R(tau_i)
    walk_pos: np.ndarray       # (L, d)
    cell: np.ndarray
    accepted: np.ndarray       # X_i
    bm_pos: np.ndarray         # (L, d), W(sigma_i)
    p: list
    eta: np.ndarray

    def records(self):
        for i in range(self.radii.size):
            yield dict(i=i + 1, r_i=float(self.radii[i]), D_i=int(self.D[i]), cell=int(self.cell[i]),
                       X_i=int(self.accepted[i]), walk_exit=[float(a) for a in self.walk_pos[i]],
                       bm_exit=[float(a) for a in self.bm_pos[i]])


@dataclass
class CouplingRun:
    cfg: CouplingConfig
    radii: np.ndarray
    D: np.ndarray
    laws: list
    start_pos: np.ndarray
    walk_exit: np.ndarray      # (T, L)
    walk_pos: np.ndarray       # (T, L, d)
    cell: np.ndarray           # (T, L)
    accept_prob: np.ndarray    # (T, L)
    accepted: np.ndarray       # (T, L)
    bm_pos: np.ndarray         # (T, L, d)
    trials: int
    seed: int
    notes: list = field(default_factory=list)

    @property
    def eta(self) -> np.ndarray:
        return np.array([law.eta for law in self.laws])

    def skeleton(self, t: int) -> CouplingSkeleton:
        return CouplingSkeleton(self.radii, self.D, self.walk_exit[t], self.walk_pos[t], self.cell[t],
                                self.accepted[t], self.bm_pos[t], [law.p for law in self.laws], self.eta)

    def deviations(self) -> np.ndarray:
        """max_{j <= L} |R(tau_j) - W(sigma_j)| per trial."""
        return np.sqrt(((self.walk_pos - self.bm_pos) ** 2).sum(axis=2)).max(axis=1)

    def dump_ndjson(self, fh, limit: int | None = None):
        for t in range(self.trials if limit is None else min(limit, self.trials)):
            for rec in self.skeleton(t).records():
                fh.write(json.dumps(dict(trial=t, **rec), sort_keys=True) + "\n")


def couple_skeleton(g: WeightedGraph, start, cfg: CouplingConfig, rng, trials: int = 1, *, workers=None,
                    check: bool = True) -> CouplingRun:
    """Coupled exit skeletons of ``trials`` independent runs."""
    if cfg.alpha > g.dim - 1:
        raise CouplingError("alpha must lie in (0, d-1]")
    stream = as_stream(rng)
    start = g.check_vertex(start)
    rel, x = kernel_state(g, start)
    gv = g.kernel_view()
    radii = cfg.radii()
    D = cfg.cells()
    if np.any(D < 4) or np.any(np.diff(radii) <= 0):
        raise InvariantError("level radii or cell counts malformed")
    cap = default_cap(float(radii.sum()))

    def fn(keys):
        return skeleton_walks(gv, start, rel, x, radii * radii, cap, keys)

    ex, codes = run_trials(fn, stream.substream(1), trials, workers=workers)
    if np.any(codes == K.FRONTIER):
        raise CouplingError("frontier overflow: the graph box is too small for the skeleton")
    if np.any(codes == K.CAPPED):
        raise CouplingError("a skeleton walk exhausted its step cap")
    law_rng = stream.substream(2)
    laws = []
    for i in range(radii.size):
        # one representative centre per level; grids are translation invariant
        laws.append(level_law(g, start, i + 1, radii[i], int(D[i]), cfg, law_rng))
    pos_of = (lambda ids: g.coords(ids).astype(float)) if isinstance(g, GridGraph) else (lambda ids: g.pos[ids])
    T, L = ex.shape
    wpos = pos_of(ex.reshape(-1)).reshape(T, L, g.dim)
    cells = np.empty((T, L), np.int64)
    aprob = np.empty((T, L))
    X = np.zeros((T, L), np.int64)
    bm = np.empty((T, L, g.dim))
    bkeys_stream = stream.substream(3)
    prev = np.full(T, start, np.int64)
    prev_bm = np.repeat(x[None], T, axis=0)
    edge = _max_edge_length(g)
    for i, law in enumerate(laws):
        if isinstance(g, GridGraph):
            c = _cells_of_exits(g, law, prev, ex[:, i])
            p_real = law.p[c]
            etas = np.full(T, law.eta)
        else:
            # no translation invariance: each centre has its own law
            ll = [level_law(g, int(pv), i + 1, radii[i], int(D[i]), cfg, law_rng) for pv in prev]
            c = np.array([lw.lookup.get(int(e), -1) for lw, e in zip(ll, ex[:, i])], dtype=np.int64)
            p_real = np.array([lw.p[cc] for lw, cc in zip(ll, c)])
            etas = np.array([lw.eta for lw in ll])
        if np.any(c < 0):
            raise InvariantError("exit vertex without a cell")
        if np.any(p_real <= 0):
            raise CouplingError("zero probability for the realized cell")
        a = etas * law.areas[c] / p_real
        if np.any(a < -1e-12) or np.any(a > 1 + 1e-9):
            raise InvariantError("acceptance probability outside [0, 1]")
        a = np.clip(a, 0.0, 1.0)
        bkeys = _trial_keys(bkeys_stream, T)
        xi = (_draw_many(bkeys, 1000 * i) < a).astype(np.int64)
        dirs = sample_directions(g.dim, int(D[i]), law.partition.tris if law.partition.tris is not None
                                 else np.zeros((1, 3, 3)), np.where(xi == 1, c, -1), bkeys, 1000 * i + 1)
        bm[:, i] = prev_bm + radii[i] * dirs
        cells[:, i] = c
        aprob[:, i] = a
        X[:, i] = xi
        if check:
            step = np.sqrt(((bm[:, i] - prev_bm) ** 2).sum(axis=1))
            if np.any(np.abs(step - radii[i]) > 1e-9 * max(1.0, radii[i])):
                raise InvariantError("Brownian exit not on the level sphere")
            if xi.any():
                pw = wpos[:, i - 1] if i > 0 else np.repeat(x[None], T, axis=0)
                dR = wpos[:, i] - pw
                dW = bm[:, i] - prev_bm
                gap = np.sqrt(((dR - dW) ** 2).sum(axis=1))
                bound = radii[i] * law.partition.chord_diameters[c] + edge
                if np.any(gap[xi == 1] > bound[xi == 1] + 1e-9):
                    raise InvariantError("accepted level violates the one-level closeness bound")
        prev = ex[:, i]
        prev_bm = bm[:, i]
    notes = ["Brownian exit points inside an accepted cell are drawn uniformly (modeling simplification)",
             "sigma_i times are not simulated"]
    return CouplingRun(cfg, radii, D, laws, x.copy(), ex, wpos, cells, aprob, X, bm, T, stream.seed, notes)


def _trial_keys(stream, T):
    from .walks import trial_keys
    return trial_keys(stream, 0, T)


@nb.njit(cache=True)
def _draw_many(keys, ctr):
    out = np.empty(keys.size)
    for i in range(keys.size):
        out[i] = draw_uniform(keys[i], ctr)
    return out


def coupling_tail(g: WeightedGraph, start, cfg: CouplingConfig, lambdas, trials: int, rng, *, workers=None):
    """Frequency of max_{j <= L} |R(tau_j) - W(sigma_j)| >= lambda r_L per lambda,
    with the correlation of (lambda, log frequency) over positive entries."""
    from .estimators import TableReport, _prob_se

    run = couple_skeleton(g, start, cfg, rng, trials, workers=workers)
    dev = run.deviations()
    rL = run.radii[-1]
    rows, lam, lf = [], [], []
    for l in lambdas:
        f = float((dev >= l * rL).mean())
        rows.append(dict(parameter=f"lambda={l:g}", estimate=f, stderr=_prob_se(f, trials)))
        if f > 0:
            lam.append(l)
            lf.append(math.log(f))
    corr = float(np.corrcoef(lam, lf)[0, 1]) if len(lam) >= 3 else math.nan
    return TableReport("coupling_tail", rows, trials, run.seed,
                       extra=dict(corr_log_linear=corr, positive_lambdas=lam, r_final=float(rL),
                                  max_deviation=float(dev.max()), mean_deviation=float(dev.mean()),
                                  eta=run.eta.tolist(), acceptance_rate=run.accepted.mean(axis=0).tolist()),
                       notes=run.notes), run
