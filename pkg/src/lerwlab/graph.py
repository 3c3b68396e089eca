"""Weighted graphs embedded in R^d.

A graph is stored in CSR form.  Self-loops are ordinary CSR entries whose
neighbour is the vertex itself, so they enter ``total_weight`` and the
transition law automatically.  Constructed lattices additionally carry
exact rational weights (``w_num / w_den``) and integer coordinates.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

INF = math.inf


class GraphError(ValueError):
    pass


def vertex_set(ids: Iterable[int]) -> np.ndarray:
    """Sorted, deduplicated vertex ids (the VertexSet representation)."""
    return np.unique(np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.int64))


@dataclass(frozen=True)
class HalfSpaceSpec:
    """The set {x : <x, normal> <= offset}."""

    normal: tuple
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("half-space normal must be a unit vector")
        object.__setattr__(self, "normal", tuple(float(x) for x in n))

    def distance(self, p) -> float:
        """Euclidean distance from p to the bounding hyperplane."""
        return abs(float(np.dot(self.normal, p)) - self.offset)

    def contains(self, p) -> bool:
        return float(np.dot(self.normal, p)) <= self.offset


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(float(x))


class WeightedGraph:
    """Immutable weighted graph (G, omega) with vertex positions.

    Parameters
    ----------
    pos : (n, d) array of vertex positions.
    indptr, indices : CSR adjacency; every stored pair must appear in both
        directions with the same weight.
    weights : float weights parallel to ``indices``.
    w_num, w_den : optional exact rational weights parallel to ``indices``.
    frontier : boolean mask of vertices whose neighbourhood was cut off by
        the finite box; walks must not step from them.
    ipos : optional integer coordinates (exact positions of lattices).
    """

    kind = 0

    def __init__(self, pos, indptr, indices, weights, *, w_num=None, w_den=None,
                 frontier=None, ipos=None, separation=None, meta=None):
        self._pos = np.ascontiguousarray(pos, dtype=float)
        if self._pos.ndim != 2:
            raise GraphError("pos must be an (n, d) array")
        self._indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self._indices = np.ascontiguousarray(indices, dtype=np.int64)
        self._weights = np.ascontiguousarray(weights, dtype=float)
        self._w_num = None if w_num is None else np.ascontiguousarray(w_num, dtype=np.int64)
        self._w_den = None if w_den is None else np.ascontiguousarray(w_den, dtype=np.int64)
        n = self._pos.shape[0]
        self._frontier = np.zeros(n, dtype=bool) if frontier is None else np.asarray(frontier, dtype=bool)
        self._ipos = None if ipos is None else np.asarray(ipos, dtype=np.int64)
        self._separation = separation
        self.meta = dict(meta or {})
        if np.any(self._weights <= 0):
            raise GraphError("edge weights must be positive")

    # -- construction -------------------------------------------------
    @classmethod
    def from_edges(cls, pos, edges, weights, *, loops=None, frontier=None, ipos=None,
                   separation=None, meta=None, exact=None):
        """Build from an undirected edge list.

        ``weights`` may be floats or Fractions; with Fractions (or
        ``exact=True``) the exact rational weights are kept.  ``loops`` maps
        vertex -> self-loop weight.
        """
        pos = np.asarray(pos, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        wl = list(weights)
        if exact is None:
            exact = all(isinstance(w, (Fraction, int, np.integer)) for w in wl) and \
                all(isinstance(w, (Fraction, int, np.integer)) for w in (loops or {}).values())
        src, dst, wts = [], [], []
        for (a, b), w in zip(edges, wl):
            if a == b:
                raise GraphError("use `loops` for self-loops")
            src += [a, b]
            dst += [b, a]
            wts += [w, w]
        for v, w in (loops or {}).items():
            if w:
                src.append(v)
                dst.append(v)
                wts.append(w)
        return cls._from_arcs(pos, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), wts,
                              exact=exact, frontier=frontier, ipos=ipos, separation=separation, meta=meta)

    @classmethod
    def _from_arcs(cls, pos, src, dst, wts, *, exact, frontier=None, ipos=None, separation=None, meta=None,
                   w_num=None, w_den=None):
        n = pos.shape[0]
        if src.size and (src.min() < 0 or max(src.max(), dst.max()) >= n):
            raise GraphError("edge endpoint out of range")
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        if w_num is None and exact:
            fr = [_as_fraction(wts[i]) for i in order]
            w_num = np.array([f.numerator for f in fr], dtype=np.int64)
            w_den = np.array([f.denominator for f in fr], dtype=np.int64)
            weights = w_num / w_den
        elif w_num is not None:
            w_num, w_den = np.asarray(w_num)[order], np.asarray(w_den)[order]
            weights = w_num / w_den
        else:
            weights = np.array([float(wts[i]) for i in order], dtype=float)
        if src.size > 1:
            dup = (src[1:] == src[:-1]) & (dst[1:] == dst[:-1])
            if dup.any():
                raise GraphError("duplicate edge")
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(pos, indptr, dst, weights, w_num=w_num, w_den=w_den, frontier=frontier,
                   ipos=ipos, separation=separation, meta=meta)

    # -- basic accessors ----------------------------------------------
    @property
    def n(self) -> int:
        return self.pos.shape[0]

    @property
    def dim(self) -> int:
        return self.pos.shape[1]

    @property
    def pos(self) -> np.ndarray:
        return self._pos

    @property
    def ipos(self):
        return self._ipos

    @property
    def indptr(self) -> np.ndarray:
        return self._indptr

    @property
    def indices(self) -> np.ndarray:
        return self._indices

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def frontier(self) -> np.ndarray:
        return self._frontier

    @property
    def is_exact(self) -> bool:
        return self._w_num is not None

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, dim={self.dim}, edges={self.num_edges})"

    def check_vertex(self, v) -> int:
        v = int(v)
        if not 0 <= v < self.n:
            raise GraphError(f"invalid vertex id {v}")
        return v

    def neighbors(self, v) -> np.ndarray:
        v = self.check_vertex(v)
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def edge_weights(self, v, exact=False):
        v = self.check_vertex(v)
        a, b = self.indptr[v], self.indptr[v + 1]
        if exact:
            self._require_exact()
            return [Fraction(int(p), int(q)) for p, q in zip(self._w_num[a:b], self._w_den[a:b])]
        return self.weights[a:b]

    def weight(self, v, w, exact=False):
        nb = self.neighbors(v)
        k = np.searchsorted(nb, w)
        if k >= nb.size or nb[k] != w:
            return Fraction(0) if exact else 0.0
        return self.edge_weights(v, exact)[k]

    def _require_exact(self):
        if not self.is_exact:
            raise GraphError("graph carries no exact rational weights")

    @property
    def num_edges(self) -> int:
        loops = int(np.sum(self.indices == np.repeat(np.arange(self.n), np.diff(self.indptr))))
        return (self.indices.size - loops) // 2 + loops

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def degree_bound(self) -> int:
        return int(self.degree.max()) if self.n else 0

    @cached_property
    def weight_bounds(self) -> tuple:
        if self.weights.size == 0:
            return (0.0, 0.0)
        return float(self.weights.min()), float(self.weights.max())

    @property
    def separation(self) -> float:
        if self._separation is None:
            if self.n < 2:
                self._separation = INF
            else:
                d, _ = cKDTree(self.pos).query(self.pos, k=2)
                self._separation = float(d[:, 1].min())
        return self._separation

    @cached_property
    def totals(self) -> np.ndarray:
        """omega(v) for every vertex."""
        return np.add.reduceat(self.weights, self.indptr[:-1]) * (self.degree > 0) if self.n else np.zeros(0)

    def check_symmetry(self, exact=True) -> bool:
        """True when omega(v,w) == omega(w,v) for every stored pair."""
        src = np.repeat(np.arange(self.n), self.degree)
        fwd = np.lexsort((self.indices, src))
        rev = np.lexsort((src, self.indices))
        if not (np.array_equal(src[fwd], self.indices[rev]) and np.array_equal(self.indices[fwd], src[rev])):
            return False
        if exact and self.is_exact:
            return bool(np.all(self._w_num[fwd] * self._w_den[rev] == self._w_num[rev] * self._w_den[fwd]))
        return bool(np.array_equal(self.weights[fwd], self.weights[rev]))

    def transition_matrix(self, exact=False):
        """Dense (exact: list of lists of Fractions) transition matrix."""
        if exact:
            self._require_exact()
            P = [[Fraction(0)] * self.n for _ in range(self.n)]
            for v in range(self.n):
                ws = self.edge_weights(v, exact=True)
                tot = sum(ws, Fraction(0))
                for w, x in zip(self.neighbors(v), ws):
                    P[v][int(w)] += x / tot
            return P
        from scipy.sparse import csr_matrix
        tot = np.repeat(self.totals, self.degree)
        return csr_matrix((self.weights / tot, self.indices, self.indptr), shape=(self.n, self.n))

    # -- compiled-kernel view -------------------------------------------
    @cached_property
    def cumprob(self) -> np.ndarray:
        cached = getattr(self, "_cumprob", None)
        if cached is not None:
            return cached
        w = self.weights
        ptr = self.indptr
        deg = np.diff(ptr)
        c = np.cumsum(w)
        base = np.concatenate([[0.0], c])[ptr[:-1]]
        tot = np.concatenate([[0.0], c])[ptr[1:]] - base
        row = np.repeat(np.arange(self.n), deg)
        out = (c - base[row]) / np.where(tot[row] > 0, tot[row], 1.0)
        last = ptr[1:][deg > 0] - 1
        out = np.minimum(out, 1.0)
        out[last] = 1.0
        self._cumprob = out
        return out

    def kernel_view(self):
        """Tuple consumed by the compiled walk kernels (CSR flavour)."""
        z = np.zeros(1, dtype=np.int64)
        return (0, self.indptr, self.indices, self.cumprob, self.pos, self.frontier,
                z, z, z, 1.0)

    def id_of(self, coords) -> int:
        """Vertex at exactly these coordinates (lattices only)."""
        if self.ipos is None:
            raise GraphError("graph has no integer coordinates")
        hit = np.flatnonzero(np.all(self.ipos == np.asarray(coords, dtype=np.int64), axis=1))
        if hit.size == 0:
            raise GraphError(f"no vertex at {tuple(coords)}")
        return int(hit[0])

    # -- serialization --------------------------------------------------
    def to_ndjson(self, fh) -> None:
        header = {"header": True, "dim": self.dim, "n": self.n, "degree_bound": self.degree_bound,
                  "separation": self.separation}
        fh.write(json.dumps(header) + "\n")
        for v in range(self.n):
            a, b = self.indptr[v], self.indptr[v + 1]
            if self.is_exact:
                adj = [[int(w), int(p), int(q)] for w, p, q in
                       zip(self.indices[a:b], self._w_num[a:b], self._w_den[a:b])]
            else:
                adj = []
                for w, x in zip(self.indices[a:b], self.weights[a:b]):
                    p, q = float(x).as_integer_ratio()
                    adj.append([int(w), p, q])
            rec = {"id": v, "pos": [float(x) for x in self.pos[v]], "adj": adj}
            if self.frontier[v]:
                rec["frontier"] = True
            fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_ndjson(cls, fh) -> "WeightedGraph":
        lines = [json.loads(s) for s in fh if s.strip()]
        header, recs = lines[0], lines[1:]
        if not header.get("header"):
            raise GraphError("missing header record")
        recs.sort(key=lambda r: r["id"])
        n = len(recs)
        pos = np.array([r["pos"] for r in recs], dtype=float).reshape(n, header["dim"])
        src, dst, num, den = [], [], [], []
        for r in recs:
            for w, p, q in r["adj"]:
                src.append(r["id"])
                dst.append(w)
                num.append(p)
                den.append(q)
        frontier = np.array([bool(r.get("frontier", False)) for r in recs])
        g = cls._from_arcs(pos, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), None,
                           exact=True, frontier=frontier, separation=header.get("separation"),
                           w_num=np.array(num, dtype=np.int64), w_den=np.array(den, dtype=np.int64))
        if not g.check_symmetry():
            raise GraphError("asymmetric weights in NDJSON input")
        return g


class GridGraph(WeightedGraph):
    """``spacing * Z^dim`` inside an integer box, nearest-neighbour edges.

    Vertex ids are row-major indices over the box, so coordinates and ids
    convert arithmetically.  The CSR arrays are only built when something
    asks for them; the compiled kernels walk the lattice implicitly, which
    keeps boxes of tens of millions of sites cheap.
    """

    kind = 1

    def __init__(self, dim: int, spacing, edge_weight, lo: Sequence[int], hi: Sequence[int], meta=None):
        self.spacing = _as_fraction(spacing)
        self.edge_weight = _as_fraction(edge_weight)
        if self.spacing <= 0 or self.edge_weight <= 0:
            raise GraphError("spacing and weight must be positive")
        if self.spacing.denominator != 1:
            raise GraphError("integer spacing required")
        k = self.spacing.numerator
        lo = [int(x) for x in lo]
        hi = [int(x) for x in hi]
        if len(lo) != dim or len(hi) != dim:
            raise GraphError("box bounds must have length dim")
        # first/last multiples of the spacing inside [lo, hi)
        self.first = np.array([-(-a // k) * k for a in lo], dtype=np.int64)
        last = np.array([((b - 1) // k) * k for b in hi], dtype=np.int64)
        self.shape = (last - self.first) // k + 1
        if np.any(self.shape <= 0):
            raise GraphError("empty box")
        self.lo, self.hi, self._dim, self.k = tuple(lo), tuple(hi), dim, k
        self.strides = np.ones(dim, dtype=np.int64)
        for i in range(dim - 2, -1, -1):
            self.strides[i] = self.strides[i + 1] * self.shape[i + 1]
        self._n = int(np.prod(self.shape))
        self._separation = float(k)
        self.meta = dict(meta or {})
        self._built = False

    @property
    def n(self) -> int:
        return self._n

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def is_exact(self) -> bool:
        return True

    def coords(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.int64)
        out = np.empty(v.shape + (self.dim,), dtype=np.int64)
        r = v.copy()
        for i in range(self.dim):
            out[..., i] = r // self.strides[i]
            r = r % self.strides[i]
        return self.first + out * self.k

    def id_of(self, coords) -> int:
        c = np.asarray(coords, dtype=np.int64)
        rel = c - self.first
        if np.any(rel % self.k) or np.any(rel < 0) or np.any(rel // self.k >= self.shape):
            raise GraphError(f"no vertex at {tuple(c)}")
        return int(np.dot(rel // self.k, self.strides))

    def _build(self):
        if self._built:
            return
        if self.n > 5_000_000:
            raise GraphError(f"refusing to materialize a {self.n}-vertex grid; use the lattice kernels")
        idx = np.arange(self.n, dtype=np.int64)
        ipos = self.coords(idx)
        src, dst = [], []
        rel = (ipos - self.first) // self.k
        for i in range(self.dim):
            ok = rel[:, i] + 1 < self.shape[i]
            a = idx[ok]
            src += [a, a + self.strides[i]]
            dst += [a + self.strides[i], a]
        src = np.concatenate(src) if src else np.zeros(0, np.int64)
        dst = np.concatenate(dst) if dst else np.zeros(0, np.int64)
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        self._indptr = np.cumsum(indptr)
        self._indices = dst
        self._w_num = np.full(dst.size, self.edge_weight.numerator, dtype=np.int64)
        self._w_den = np.full(dst.size, self.edge_weight.denominator, dtype=np.int64)
        self._weights = self._w_num / self._w_den
        self._ipos = ipos
        self._pos = ipos.astype(float)
        self._frontier = np.any((rel == 0) | (rel == self.shape - 1), axis=1)
        self._built = True

    @property
    def pos(self):
        self._build()
        return self._pos

    @property
    def ipos(self):
        self._build()
        return self._ipos

    @property
    def indptr(self):
        self._build()
        return self._indptr

    @property
    def indices(self):
        self._build()
        return self._indices

    @property
    def weights(self):
        self._build()
        return self._weights

    @property
    def frontier(self):
        self._build()
        return self._frontier

    def edge_weights(self, v, exact=False):
        self._build()
        return super().edge_weights(v, exact)

    def to_weighted(self, finite: bool = True) -> WeightedGraph:
        """The box as an explicit graph.  With ``finite`` the box is the whole
        graph (edge vertices simply have fewer neighbours); otherwise the
        box-edge vertices stay marked as frontier."""
        self._build()
        return WeightedGraph(self._pos, self._indptr, self._indices, self._weights, w_num=self._w_num,
                             w_den=self._w_den, frontier=None if finite else self._frontier,
                             ipos=self._ipos, separation=float(self.k), meta=self.meta)

    def kernel_view(self):
        z = np.zeros(1, dtype=np.int64)
        zf = np.zeros((1, self.dim))
        return (1, z, z, np.zeros(1), zf, np.zeros(1, dtype=bool),
                self.shape.astype(np.int64), self.strides, self.first, float(self.k))


# -- operations -------------------------------------------------------------

def total_weight(g: WeightedGraph, v, exact=False):
    """omega(v) = sum_w omega(v, w), self-loop included."""
    v = g.check_vertex(v)
    if isinstance(g, GridGraph) and not g._built:
        c = g.coords(v)
        rel = (c - g.first) // g.k
        deg = int(np.sum(rel > 0) + np.sum(rel < g.shape - 1))
        w = g.edge_weight * deg
        return w if exact else float(w)
    if exact:
        return sum(g.edge_weights(v, exact=True), Fraction(0))
    return float(g.edge_weights(v).sum())


def euclidean_ball(g: WeightedGraph, center, r) -> np.ndarray:
    """Vertices strictly within distance r of ``center`` (open ball)."""
    if r < 0:
        raise ValueError("radius must be non-negative")
    c = np.asarray(center, dtype=float)
    d2 = np.sum((g.pos - c) ** 2, axis=1)
    return np.flatnonzero(d2 < r * r).astype(np.int64)


def external_boundary(g: WeightedGraph, X) -> np.ndarray:
    """Vertices outside X having a neighbour in X."""
    X = vertex_set(X)
    inX = np.zeros(g.n, dtype=bool)
    inX[X] = True
    nbrs = np.concatenate([g.neighbors(v) for v in X]) if X.size else np.zeros(0, np.int64)
    out = np.unique(nbrs)
    return out[~inX[out]]


def graph_metric(g: WeightedGraph, v, w):
    """Hop distance; ``math.inf`` when disconnected."""
    v, w = g.check_vertex(v), g.check_vertex(w)
    if v == w:
        return 0
    dist = {v: 0}
    q = deque([v])
    while q:
        x = q.popleft()
        for y in g.neighbors(x):
            y = int(y)
            if y not in dist:
                dist[y] = dist[x] + 1
                if y == w:
                    return dist[y]
                q.append(y)
    return INF


def discrete_laplacian(g: WeightedGraph, f, v):
    """(Delta f)(v) = -f(v) + sum_w omega(v,w)/omega(v) f(w).

    ``f`` is indexable by vertex id.  With Fraction values and exact weights
    the result is an exact Fraction.
    """
    v = g.check_vertex(v)
    nb = g.neighbors(v)
    fv = f[v]
    if isinstance(fv, Fraction) and g.is_exact:
        ws = g.edge_weights(v, exact=True)
        tot = sum(ws, Fraction(0))
        return -fv + sum((x * f[int(w)] for w, x in zip(nb, ws)), Fraction(0)) / tot
    ws = g.edge_weights(v)
    vals = np.array([float(f[int(w)]) for w in nb])
    return -float(fv) + float(np.dot(ws, vals) / ws.sum())


def nearest_vertex(g: WeightedGraph, p) -> int:
    """Closest vertex to p; equidistant candidates resolved lexicographically."""
    if g.n == 0:
        raise GraphError("empty graph")
    p = np.asarray(p, dtype=float)
    if isinstance(g, GridGraph) and not g._built:
        # nearest lattice point per axis, ties toward the smaller coordinate
        k = g.k
        lo_c = g.first
        hi_c = g.first + (g.shape - 1) * k
        t = (p - lo_c) / k
        fl = np.floor(t)
        cand = np.where(t - fl > 0.5, fl + 1, fl)
        c = np.clip(lo_c + cand.astype(np.int64) * k, lo_c, hi_c)
        return g.id_of(c)
    d2 = np.sum((g.pos - p) ** 2, axis=1)
    m = d2.min()
    ties = np.flatnonzero(d2 <= m + 1e-9 * (1.0 + m))
    if ties.size == 1:
        return int(ties[0])
    pts = g.pos[ties]
    order = np.lexsort(pts.T[::-1])
    return int(ties[order[0]])
