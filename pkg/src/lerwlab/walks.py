"""Random walks, stopping rules, loop erasure, cut points, conditioned
walks and Wilson's algorithm."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import _kernels as K
from .graph import GraphError, GridGraph, WeightedGraph, vertex_set
from .rng import RngStream, as_stream, trial_key_range

STOP_REASONS = {K.HIT: "hit-absorbing", K.EXITED: "exited-radius", K.CAPPED: "step-cap",
                K.FRONTIER: "frontier-error"}


class WalkError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathSeq:
    """Vertex sequence with a continuity flag per step.

    ``continuous[i]`` says whether vertices i and i+1 are joined by an edge
    of the graph; a False flag marks a jump (discontinuous path)."""

    vertices: tuple
    continuous: tuple = None

    def __post_init__(self):
        vs = tuple(int(v) for v in self.vertices)
        object.__setattr__(self, "vertices", vs)
        if self.continuous is None:
            object.__setattr__(self, "continuous", (True,) * max(len(vs) - 1, 0))
        else:
            c = tuple(bool(x) for x in self.continuous)
            if len(c) != max(len(vs) - 1, 0):
                raise ValueError("one continuity flag per step required")
            object.__setattr__(self, "continuous", c)

    @classmethod
    def on_graph(cls, g: WeightedGraph, vertices) -> "PathSeq":
        vs = [int(v) for v in vertices]
        flags = []
        for a, b in zip(vs, vs[1:]):
            nb = g.neighbors(a)
            k = np.searchsorted(nb, b)
            flags.append(bool(k < nb.size and nb[k] == b))
        return cls(tuple(vs), tuple(flags))

    @classmethod
    def concat(cls, pieces: Sequence["PathSeq"]) -> "PathSeq":
        """Concatenation; the junction between two pieces is a jump."""
        vs, fl = [], []
        for p in pieces:
            if not p.vertices:
                continue
            if vs:
                fl.append(False)
            vs.extend(p.vertices)
            fl.extend(p.continuous)
        return cls(tuple(vs), tuple(fl))

    def check(self, g: WeightedGraph) -> bool:
        """Every flagged step is an edge of g."""
        for (a, b), c in zip(zip(self.vertices, self.vertices[1:]), self.continuous):
            if c and b not in set(g.neighbors(a).tolist()):
                return False
        return True

    @property
    def length(self) -> int:
        return max(len(self.vertices) - 1, 0)

    def __len__(self):
        return len(self.vertices)

    def __iter__(self):
        return iter(self.vertices)

    def __getitem__(self, i):
        return self.vertices[i]

    def reversed(self) -> "PathSeq":
        return PathSeq(self.vertices[::-1], self.continuous[::-1])

    def is_simple(self) -> bool:
        return len(set(self.vertices)) == len(self.vertices)


def _as_path(p) -> PathSeq:
    return p if isinstance(p, PathSeq) else PathSeq(tuple(p))


@dataclass(frozen=True)
class StopSpec:
    """Absorbing set, radius stops ((centre, r) pairs) and a step cap."""

    absorbing: tuple = ()
    radii: tuple = ()
    cap: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "absorbing", tuple(int(v) for v in vertex_set(self.absorbing)))
        object.__setattr__(self, "radii", tuple((tuple(float(x) for x in c), float(r)) for c, r in self.radii))
        if not self.absorbing and not self.radii and self.cap is None:
            raise ValueError("a stop rule needs an absorbing set, a radius or a step cap")
        if self.cap is not None and self.cap <= 0:
            raise ValueError("step cap must be positive")


def default_cap(r: float) -> int:
    """64 r^2 log(r + 2) steps for a radius-r experiment."""
    return int(math.ceil(64 * r * r * math.log(r + 2)))


@dataclass
class WalkOutcome:
    path: PathSeq
    reason: str
    hit_index: int


# -- plumbing between graphs and kernels ----------------------------------

def kernel_state(g: WeightedGraph, v: int):
    """(relative grid index, position) arrays of vertex v for the kernels."""
    v = g.check_vertex(v)
    if isinstance(g, GridGraph):
        c = g.coords(v)
        rel = ((c - g.first) // g.k).astype(np.int64)
        return rel, c.astype(float)
    return np.zeros(1, np.int64), np.array(g.pos[v], dtype=float)


def absorbing_mask(g: WeightedGraph, A) -> np.ndarray:
    A = vertex_set(A)
    if A.size == 0:
        return np.zeros(0, dtype=np.bool_)
    m = np.zeros(g.n, dtype=np.bool_)
    m[A] = True
    return m


def _radius_arrays(g, radii):
    c = np.array([r[0] for r in radii], dtype=float).reshape(-1, g.dim)
    r2 = np.array([r[1] ** 2 for r in radii], dtype=float)
    return c, r2


def trial_keys(stream: RngStream, start: int, count: int) -> np.ndarray:
    return trial_key_range(np.uint64(stream.key), start, count)


def default_workers() -> int:
    return int(os.environ.get("LERWLAB_WORKERS", os.cpu_count() or 1))


def run_trials(fn, stream, trials: int, *, workers: int | None = None, chunk: int = 256, nkeys: int = 1):
    """Run ``fn(*key_arrays)`` over fixed chunks of trial indices.

    Chunk boundaries depend only on ``chunk``, each trial's keys only on
    (stream, trial index), and results are concatenated in trial order, so
    the output is identical for any worker count.  ``nkeys`` independent
    key arrays (sub-streams) are passed per chunk."""
    stream = as_stream(stream)
    subs = [stream] + [stream.substream(j) for j in range(1, nkeys)]
    bounds = [(a, min(chunk, trials - a)) for a in range(0, trials, chunk)]
    workers = workers or default_workers()

    def job(b):
        return fn(*[trial_keys(s, b[0], b[1]) for s in subs])

    if workers <= 1 or len(bounds) <= 1:
        parts = [job(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(job, bounds))
    if not parts:
        return None
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))
    return np.concatenate(parts)


# -- operations ---------------------------------------------------------------

def step(g: WeightedGraph, v, rng, ctr: int = 0) -> int:
    """One step of the walk: w with probability omega(v,w)/omega(v).

    ``rng`` is a stream (or seed); ``ctr`` selects the draw."""
    v = g.check_vertex(v)
    if isinstance(g, GridGraph):
        rel, x = kernel_state(g, v)
        if np.any((rel == 0) | (rel == g.shape - 1)):
            raise WalkError(f"vertex {v} is on the frontier")
    elif g.degree[v] == 0:
        raise WalkError(f"vertex {v} is isolated")
    else:
        rel, x = kernel_state(g, v)
    key = as_stream(rng).key
    return int(K.single_step(g.kernel_view(), v, rel, x, np.uint64(key), ctr))


def run_until(g: WeightedGraph, start, stop: StopSpec, rng, trial: int = 0) -> WalkOutcome:
    """Walk from ``start`` until the stop rule fires (hitting uses t >= 1)."""
    start = g.check_vertex(start)
    rel, x = kernel_state(g, start)
    cap = stop.cap if stop.cap is not None else default_cap(max([r for _, r in stop.radii] or [g.n ** (1 / g.dim)]))
    c, r2 = _radius_arrays(g, stop.radii)
    key = as_stream(rng).trial_key(trial)
    path, code = K.walk_path(g.kernel_view(), start, rel, x, absorbing_mask(g, stop.absorbing), c, r2, cap,
                             np.uint64(key))
    return WalkOutcome(PathSeq(tuple(path.tolist())), STOP_REASONS[int(code)], int(path.size - 1))


def sample_paths(g: WeightedGraph, start, stop: StopSpec, trials: int, rng, erase: bool = True,
                 workers: int | None = None):
    """Many walks (or their loop erasures) as a list of vertex arrays plus stop codes."""
    start = g.check_vertex(start)
    rel, x = kernel_state(g, start)
    cap = stop.cap if stop.cap is not None else default_cap(max([r for _, r in stop.radii] or [10.0]))
    c, r2 = _radius_arrays(g, stop.radii)
    gv = g.kernel_view()
    am = absorbing_mask(g, stop.absorbing)

    def fn(keys):
        flat, offs, codes, steps = K.walk_batch(gv, start, rel, x, am, c, r2, cap, keys, erase)
        lens = np.diff(offs)
        return flat, lens, codes, steps

    flat, lens, codes, steps = run_trials(fn, rng, trials, workers=workers)
    offs = np.concatenate([[0], np.cumsum(lens)])
    return [flat[offs[i]:offs[i + 1]] for i in range(trials)], codes, steps


def loop_erase(path) -> PathSeq:
    """Chronological loop erasure, literally: LE(1) = gamma(1),
    LE(i+1) = gamma(j_i + 1) with j_i the last visit to LE(i).

    Works unchanged on discontinuous paths; the flag of an erased step is
    the flag of the original step it came from."""
    p = _as_path(path)
    if not p.vertices:
        raise ValueError("loop erasure of an empty path")
    last = {}
    for i, v in enumerate(p.vertices):
        last[v] = i
    n = len(p.vertices)
    k = 0
    vs, fl = [p.vertices[0]], []
    while True:
        j = last[p.vertices[k]]
        if j >= n - 1:
            break
        fl.append(p.continuous[j])
        k = j + 1
        vs.append(p.vertices[k])
    return PathSeq(tuple(vs), tuple(fl))


def _last_visit_indices(p: PathSeq):
    """j_t for each vertex of LE(p)."""
    last = {}
    for i, v in enumerate(p.vertices):
        last[v] = i
    n = len(p.vertices)
    out = []
    k = 0
    while True:
        j = last[p.vertices[k]]
        out.append(j)
        if j >= n - 1:
            break
        k = j + 1
    return out


def loop_erase_pieces(pieces) -> list:
    """Split LE(gamma_1 ... gamma_n) into the parts coming from each piece.

    A vertex of the erasure belongs to piece i when its last visit j_t
    falls inside piece i; the parts are consecutive, simple, pairwise
    disjoint and concatenate to the whole erasure (empty parts allowed)."""
    pieces = [_as_path(p) for p in pieces]
    whole = PathSeq.concat(pieces)
    if not whole.vertices:
        return [PathSeq(()) for _ in pieces]
    le = loop_erase(whole)
    js = _last_visit_indices(whole)
    ends = np.cumsum([len(p.vertices) for p in pieces])
    owner = np.searchsorted(ends, js, side="right")
    out = []
    for i in range(len(pieces)):
        idx = [t for t, o in enumerate(owner) if o == i]
        if not idx:
            out.append(PathSeq(()))
            continue
        a, b = idx[0], idx[-1]
        out.append(PathSeq(le.vertices[a:b + 1], le.continuous[a:b]))
    return out


def cut_points(path, t: int | None = None) -> list:
    """[(index, vertex)] for cut times i (prefix [0, i] disjoint from the
    suffix [i+1, end]), restricted to i < t when t is given."""
    p = _as_path(path)
    if not p.vertices:
        raise ValueError("cut points of an empty path")
    ct = K.cut_times_array(np.asarray(p.vertices, dtype=np.int64))
    out = [(int(i), p.vertices[int(i)]) for i in ct]
    if t is not None:
        out = [(i, v) for i, v in out if i < t]
    return out


def _conditioned_setup(g, start, absorbing, target, mode):
    from .oracle import hitting_distribution

    if isinstance(g, GridGraph):
        g = g.to_weighted(finite=False)
    start = g.check_vertex(start)
    A = vertex_set(absorbing)
    target = int(target)
    if target not in set(A.tolist()):
        raise WalkError("target must lie in the absorbing set")
    h0 = hitting_distribution(g, start, A, mode=mode).as_dict().get(target, 0)
    if not h0:
        raise WalkError("conditioning on a zero-probability event")
    h = conditioned_h(g, A, target, mode)
    return g, start, A, doob_view(g, h, A)


def conditioned_walk(g: WeightedGraph, start, absorbing, target, rng, trial: int = 0, mode="auto"):
    """Walk stopped on ``absorbing`` conditioned to stop at ``target``.

    Doob transform with h(x) = P^x(first absorbing vertex is target),
    computed by the exact oracle."""
    g, start, A, gv = _conditioned_setup(g, start, absorbing, target, mode)
    rel, x = kernel_state(g, start)
    c = np.zeros((0, g.dim))
    r2 = np.zeros(0)
    key = as_stream(rng).trial_key(trial)
    path, code = K.walk_path(gv, start, rel, x, absorbing_mask(g, A), c, r2, default_cap(float(g.n)),
                             np.uint64(key))
    return WalkOutcome(PathSeq(tuple(path.tolist())), STOP_REASONS[int(code)], int(path.size - 1))


def sample_conditioned(g: WeightedGraph, start, absorbing, target, trials: int, rng, erase: bool = True,
                       mode="auto", workers: int | None = None):
    """Batch version of ``conditioned_walk``: the harmonic solve is done once.
    Trial t uses the same key as ``conditioned_walk(..., trial=t)``."""
    g, start, A, gv = _conditioned_setup(g, start, absorbing, target, mode)
    rel, x = kernel_state(g, start)
    c = np.zeros((0, g.dim))
    r2 = np.zeros(0)
    am = absorbing_mask(g, A)
    cap = default_cap(float(g.n))

    def fn(keys):
        flat, offs, codes, steps = K.walk_batch(gv, start, rel, x, am, c, r2, cap, keys, erase)
        return flat, np.diff(offs), codes

    flat, lens, codes = run_trials(fn, rng, trials, workers=workers)
    offs = np.concatenate([[0], np.cumsum(lens)])
    return [flat[offs[i]:offs[i + 1]] for i in range(trials)], codes


def conditioned_h(g: WeightedGraph, A, target, mode="auto") -> np.ndarray:
    """h(x) = P^x(walk enters A first at target), time 0 included."""
    from .oracle import harmonic_solve

    A = [int(a) for a in vertex_set(A)]
    Aset = set(A)
    interior = [v for v in range(g.n) if v not in Aset]
    bound = {a: (1 if a == target else 0) for a in A}
    if g.is_exact:
        bound = {a: Fraction(x) for a, x in bound.items()}
    # only the part of the graph that can reach A matters
    f = harmonic_solve(g, bound, interior, mode=mode) if interior else dict(bound)
    return np.array([float(f[v]) for v in range(g.n)])


def doob_view(g: WeightedGraph, h: np.ndarray, A) -> tuple:
    """Kernel view of the h-transformed walk p(v, w) h(w) / h(v)."""
    A = set(int(a) for a in vertex_set(A))
    w = g.weights * h[g.indices]
    cum = np.zeros_like(w)
    for v in range(g.n):
        a, b = g.indptr[v], g.indptr[v + 1]
        tot = w[a:b].sum()
        if b > a and tot > 0:
            cum[a:b] = np.minimum(np.cumsum(w[a:b]) / tot, 1.0)
            # zero-weight arcs after the last positive one must stay unreachable
            last = a + int(np.flatnonzero(w[a:b] > 0)[-1])
            cum[last:b] = 1.0
    gv = list(g.kernel_view())
    gv[3] = cum
    return tuple(gv)


def wilson_ust(g: WeightedGraph, root, rng, trial: int = 0, order=None) -> np.ndarray:
    """Uniform spanning forest wired at ``root`` (parent array, -1 on roots).

    Each branch is a loop-erased walk stopped on the growing tree."""
    if isinstance(g, GridGraph):
        g._build()
    R = vertex_set(root)
    if R.size == 0:
        raise GraphError("root set must be non-empty")
    in_tree = np.zeros(g.n, dtype=np.bool_)
    in_tree[R] = True
    seen = in_tree.copy()
    q = list(R)
    while q:
        x = q.pop()
        for y in g.neighbors(x):
            if not seen[y]:
                seen[y] = True
                q.append(int(y))
    if not seen.all():
        raise GraphError("graph has vertices not connected to the root set")
    order = np.arange(g.n, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
    gv = WeightedGraph.kernel_view(g)
    key = as_stream(rng).trial_key(trial)
    return K.wilson(gv, in_tree, order, np.uint64(key))


def tree_branch(parent: np.ndarray, v: int) -> tuple:
    """Path from v to the root following the parent map."""
    out = [int(v)]
    while parent[out[-1]] >= 0:
        out.append(int(parent[out[-1]]))
    return tuple(out)
