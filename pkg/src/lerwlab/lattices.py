"""Concrete lattice families: grids, stitched fine/coarse interpolations,
the rotated lattice, and exact step-moment certificates.

Stitching of a fine lattice Z^d (type 1) with a coarse lattice kZ^d
(type 2): space is cut into blocks [Lb, Lb+L)^d, each block filled with
one type according to ``xi``.  A coarse vertex w whose nearest fine vertex
x sits at axis-aligned distance h <= k is joined to x and to fine vertices
in the plane through x perpendicular to w - x, with weight table(|v-x|)/h.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .graph import GraphError, GridGraph, WeightedGraph


class ConfigError(ValueError):
    pass


# pair -> (dim, coarse spacing, coarse weight, cross table by squared in-plane offset)
PAIRS = {
    "z3-2z3": (3, 2, Fraction(2), {0: Fraction(1), 1: Fraction(1, 2), 2: Fraction(1, 4)}),
    "z2-2z2": (2, 2, Fraction(1), {0: Fraction(1), 1: Fraction(1, 2)}),
    "z3-3z3": (3, 3, Fraction(3), {0: Fraction(1), 1: Fraction(2, 3), 2: Fraction(2, 3),
                                   4: Fraction(1, 3), 8: Fraction(1, 3)}),
}


def grid(dim: int, spacing=1, edge_weight=1, box=None) -> GridGraph:
    """``spacing * Z^dim`` intersected with the half-open box ``[lo, hi)``.

    ``box`` is ``(lo, hi)`` with integer sequences.
    """
    if dim not in (1, 2, 3, 4, 5):
        raise GraphError("dim must be between 1 and 5")
    if box is None:
        raise GraphError("box required")
    lo, hi = box
    lo = [int(x) for x in np.broadcast_to(lo, (dim,))]
    hi = [int(x) for x in np.broadcast_to(hi, (dim,))]
    if any(b <= a for a, b in zip(lo, hi)):
        raise GraphError("empty box")
    return GridGraph(dim, spacing, edge_weight, lo, hi)


def centered_grid(dim: int, half: int, spacing=1, edge_weight=1) -> GridGraph:
    """Grid on [-half, half]^dim."""
    return grid(dim, spacing, edge_weight, ([-half] * dim, [half + 1] * dim))


def _parse_xi(xi, M, dim):
    shape = (M,) * dim
    if isinstance(xi, str):
        if xi == "all1":
            return np.ones(shape, dtype=np.int8)
        if xi == "all2":
            return np.full(shape, 2, dtype=np.int8)
        if xi.startswith("random:"):
            seed = int(xi.split(":", 1)[1])
            return np.random.default_rng(seed).integers(1, 3, size=shape).astype(np.int8)
        raise ConfigError(f"unknown xi spec {xi!r}")
    a = np.asarray(xi, dtype=np.int8)
    if a.size != M ** dim:
        raise ConfigError(f"xi must have {M ** dim} entries, got {a.size}")
    a = a.reshape(shape)
    if not np.all((a == 1) | (a == 2)):
        raise ConfigError("xi entries must be 1 or 2")
    return a


@dataclass(frozen=True)
class StitchConfig:
    """Block configuration of a stitched graph.

    ``window`` optionally restricts construction to a sub-box ``(lo, hi)``
    of the full region ``[-margin, LM + margin)^d``.
    """

    pair: str
    L: int
    M: int
    xi: object = "all1"
    margin: int = 4
    alpha: Fraction = Fraction(1, 9)
    window: tuple | None = None
    xi_array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.pair not in PAIRS:
            raise ConfigError(f"unknown lattice pair {self.pair!r}; choose from {sorted(PAIRS)}")
        if int(self.L) != self.L or self.L <= 6:
            raise ConfigError(f"block side L must be an integer > 6 (got L={self.L})")
        if int(self.M) != self.M or self.M < 1:
            raise ConfigError("M must be a positive integer")
        a = Fraction(self.alpha)
        if a <= 0:
            raise ConfigError("alpha must be positive")
        object.__setattr__(self, "alpha", a)
        # M <= L^alpha, checked exactly as M^q <= L^p
        if self.M ** a.denominator > self.L ** a.numerator:
            raise ConfigError(f"M={self.M} exceeds L^alpha = {self.L}^{a} ({self.L ** float(a):.4g})")
        if self.margin < 0:
            raise ConfigError("margin must be non-negative")
        object.__setattr__(self, "xi_array", _parse_xi(self.xi, self.M, self.dim))

    @property
    def dim(self) -> int:
        return PAIRS[self.pair][0]

    @property
    def coarse(self) -> int:
        return PAIRS[self.pair][1]

    @property
    def outside_type(self) -> int:
        """Majority vote over xi; ties go to type 1."""
        n2 = int(np.sum(self.xi_array == 2))
        return 2 if 2 * n2 > self.xi_array.size else 1

    def bounds(self):
        lo = np.full(self.dim, -self.margin, dtype=np.int64)
        hi = np.full(self.dim, self.L * self.M + self.margin, dtype=np.int64)
        if self.window is not None:
            wlo, whi = (np.broadcast_to(np.asarray(x, dtype=np.int64), (self.dim,)) for x in self.window)
            lo, hi = np.maximum(lo, wlo), np.minimum(hi, whi)
            if np.any(hi <= lo):
                raise ConfigError("window does not meet the stitched region")
        return lo, hi

    def types_at(self, pts: np.ndarray) -> np.ndarray:
        """Block type (1 or 2) of integer points, shape (..., d)."""
        b = np.floor_divide(pts, self.L)
        inside = np.all((b >= 0) & (b < self.M), axis=-1)
        out = np.full(pts.shape[:-1], self.outside_type, dtype=np.int8)
        bi = np.clip(b, 0, self.M - 1)
        out[inside] = self.xi_array[tuple(bi[inside].T)]
        return out


def _lattice_mask(cfg: StitchConfig, lo, hi):
    """Boolean arrays (is type-1 vertex, is type-2 vertex) on the box [lo, hi)."""
    axes = [np.arange(a, b) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    t = cfg.types_at(pts)
    k = cfg.coarse
    on_coarse = np.all(pts % k == 0, axis=-1)
    return t == 1, (t == 2) & on_coarse


def stitched(cfg: StitchConfig) -> WeightedGraph:
    dim, k, wk, table = PAIRS[cfg.pair]
    lo, hi = cfg.bounds()
    pad = 2 * k + 2
    plo, phi = lo - pad, hi + pad
    is1, is2 = _lattice_mask(cfg, plo, phi)
    shape = np.array(is1.shape)
    inwin = np.zeros(is1.shape, dtype=bool)
    inwin[tuple(slice(pad, pad + int(h - l)) for l, h in zip(lo, hi))] = True
    isv = (is1 | is2) & inwin

    # vertex ids: row-major over the window
    vid = np.full(is1.shape, -1, dtype=np.int64)
    coords = np.argwhere(isv)
    vid[tuple(coords.T)] = np.arange(len(coords))
    n = len(coords)
    ipos = coords + plo

    # all weights are integers over the common denominator D
    D = 1
    for f in [wk, *table.values()] + [Fraction(1, h) for h in range(1, k + 1)]:
        D = D * f.denominator // math.gcd(D, f.denominator)
    D *= math.lcm(*range(1, k + 1))
    src, dst, wint = [], [], []

    def shifted(a, off):
        """a[p + off] aligned with p; out-of-range reads as False."""
        out = np.zeros_like(a)
        src_sl, dst_sl = [], []
        for o, s in zip(off, shape):
            if o >= 0:
                src_sl.append(slice(o, s))
                dst_sl.append(slice(0, s - o))
            else:
                src_sl.append(slice(0, s + o))
                dst_sl.append(slice(-o, s))
        out[tuple(dst_sl)] = a[tuple(src_sl)]
        return out

    def add(pa, pb, weight):
        """Edges between box points pa[i] and pb[i] when both are windowed vertices."""
        ok = np.all((pb >= 0) & (pb < shape), axis=1)
        pa, pb = pa[ok], pb[ok]
        ia, ib = vid[tuple(pa.T)], vid[tuple(pb.T)]
        ok = (ia >= 0) & (ib >= 0)
        src.append(ia[ok])
        dst.append(ib[ok])
        wint.append(np.full(int(ok.sum()), int(weight * D), dtype=np.int64))

    units = [tuple(int(i == j) for j in range(dim)) for i in range(dim)]
    for e in units:
        a = np.argwhere(is1 & shifted(is1, e))
        add(a, a + np.asarray(e), Fraction(1))
        ek = tuple(k * x for x in e)
        a = np.argwhere(is2 & shifted(is2, ek))
        add(a, a + np.asarray(ek), wk)

    # squared distance from each coarse vertex to its nearest fine vertex (within k)
    offs = [o for o in itertools.product(range(-k, k + 1), repeat=dim) if 0 < sum(x * x for x in o) <= k * k]
    big = k * k + 1
    mind2 = np.full(is1.shape, big, dtype=np.int64)
    for o in offs:
        hit = is2 & shifted(is1, o)
        mind2[hit] = np.minimum(mind2[hit], sum(x * x for x in o))
    # every axis-aligned fine vertex at the minimal distance anchors a stencil
    for o in offs:
        if sum(1 for x in o if x) != 1:
            continue
        h = max(abs(x) for x in o)
        w = np.argwhere(is2 & shifted(is1, o) & (mind2 == h * h))
        if w.size == 0:
            continue
        ax = next(i for i, x in enumerate(o) if x)
        perp = [q for q in itertools.product(range(-k, k + 1), repeat=dim)
                if q[ax] == 0 and sum(x * x for x in q) in table]
        for q in perp:
            v = w + np.asarray(o) + np.asarray(q)
            okb = np.all((v >= 0) & (v < shape), axis=1)
            fine = np.zeros(len(v), dtype=bool)
            fine[okb] = is1[tuple(v[okb].T)]
            add(v[fine], w[fine], table[sum(x * x for x in q)] / h)

    s = np.concatenate(src)
    d = np.concatenate(dst)
    wi = np.concatenate(wint)
    # merge coinciding arcs (two anchors may reach the same fine vertex)
    a_s = np.concatenate([s, d])
    a_d = np.concatenate([d, s])
    a_w = np.concatenate([wi, wi])
    key = a_s * n + a_d
    uk, inv = np.unique(key, return_inverse=True)
    wsum = np.zeros(len(uk), dtype=np.int64)
    np.add.at(wsum, inv, a_w)
    a_s, a_d = uk // n, uk % n
    gcd = np.gcd(wsum, D)
    frontier = np.any((ipos < lo + k) | (ipos >= hi - k), axis=1)
    return WeightedGraph._from_arcs(
        ipos.astype(float), a_s, a_d, None, exact=True, frontier=frontier, ipos=ipos,
        separation=1.0, w_num=wsum // gcd, w_den=D // gcd,
        meta={"family": "stitched", "pair": cfg.pair, "L": cfg.L, "M": cfg.M})


def influence_region(cfg: StitchConfig, a, b):
    """The closed region [L(a+1/3), L(b+2/3)] (per axis) attached to block box [a, b]."""
    a = np.asarray(a)
    b = np.asarray(b)
    return (Fraction(1, 3) + a) * cfg.L, (Fraction(2, 3) + b) * cfg.L


def restrict_edges(g: WeightedGraph, lo, hi):
    """Edge set {(pos v, pos w, weight)} of g with both endpoints in [lo, hi] (closed)."""
    ip = g.ipos
    inside = np.ones(g.n, dtype=bool)
    for i in range(g.dim):
        inside &= (ip[:, i] >= lo[i]) & (ip[:, i] <= hi[i])
    out = set()
    src = np.repeat(np.arange(g.n), np.diff(g.indptr))
    num = g._w_num
    den = g._w_den
    for e in np.flatnonzero(inside[src] & inside[g.indices]):
        v, w = src[e], g.indices[e]
        out.add((tuple(ip[v]), tuple(ip[w]), Fraction(int(num[e]), int(den[e]))))
    verts = {tuple(p) for p in ip[inside]}
    return verts, out


ROTATED_BASIS = np.array([[4, 3, 0], [3, -4, 0], [0, 0, 5]], dtype=np.int64)


def rotated_lattice(box) -> WeightedGraph:
    """Integer span of (4,3,0), (3,-4,0), (0,0,5) in the half-open box, weight 5 edges."""
    B = ROTATED_BASIS
    G = B @ B.T
    if not np.array_equal(G, 25 * np.eye(3, dtype=np.int64)):
        raise GraphError("rotated basis must be orthogonal with norm 5")
    lo, hi = (np.broadcast_to(np.asarray(x, dtype=np.int64), (3,)) for x in box)
    if np.any(hi <= lo):
        raise GraphError("empty box")
    axes = [np.arange(a, b) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    # p = c B with integer c  <=>  B p == 0 mod 25
    pts = pts[np.all((pts @ B.T) % 25 == 0, axis=1)]
    index = {tuple(p): i for i, p in enumerate(pts)}
    edges = []
    deg = np.zeros(len(pts), dtype=np.int64)
    for i, p in enumerate(pts):
        for sgn in (1, -1):
            for b in B:
                j = index.get(tuple(p + sgn * b))
                if j is not None:
                    deg[i] += 1
                    if j > i:
                        edges.append((i, j))
    return WeightedGraph.from_edges(pts.astype(float), np.array(edges).reshape(-1, 2),
                                    [Fraction(5)] * len(edges), frontier=deg < 6, ipos=pts,
                                    separation=5.0, meta={"family": "rotated"})


# -- moment certificates ---------------------------------------------------

@dataclass
class MomentCertificate:
    vertex: int
    vclass: str
    mean: tuple
    second: tuple
    third: dict

    @property
    def mean_zero(self) -> bool:
        return all(x == 0 for x in self.mean)

    @property
    def isotropic(self) -> bool:
        d = len(self.mean)
        s = self.second
        return all(s[i][j] == (s[0][0] if i == j else 0) for i in range(d) for j in range(d))

    @property
    def third_zero(self) -> bool:
        return all(x == 0 for x in self.third.values())


def _arc_int_weights(g: WeightedGraph):
    """Integer arc weights scaled by the lcm of all denominators (exact)."""
    g._require_exact()
    den = g._w_den
    lcm = 1
    for q in np.unique(den):
        lcm = lcm * int(q) // math.gcd(lcm, int(q))
    return g._w_num * (lcm // den)


def _require_ipos(g):
    if g.ipos is None:
        raise GraphError("moment certificates need integer vertex coordinates")
    return g.ipos


def vertex_class(g: WeightedGraph, v: int, cfg: StitchConfig | None) -> str:
    return classify_vertices(g, np.array([v]), cfg)[0]


def classify_vertices(g: WeightedGraph, vs: np.ndarray, cfg: StitchConfig | None) -> np.ndarray:
    """'interior' (distance > k from every block face square), 'stitch-face'
    (distance > k from every block edge segment, or block corner point in 2-D)
    or 'stitch-edge-or-corner'.  k is the coarse spacing (2 or 3), the reach
    of the stitching stencil."""
    out = np.empty(len(vs), dtype=object)
    if cfg is None:
        out[:] = "interior"
        return out
    p = _require_ipos(g)[vs].astype(np.int64)
    L, LM = cfg.L, cfg.L * cfg.M
    # per-axis distance to nearest plane {Ln}, and to the slab [0, LM]
    planes = np.clip(np.rint(p / L), 0, cfg.M) * L
    dpl = np.abs(p - planes)
    dout = np.maximum(0, np.maximum(-p, p - LM))
    d = p.shape[1]
    # squared distance to faces: one axis at a plane, others clamped to [0, LM]
    tot_out2 = np.sum(dout ** 2, axis=1)
    face2 = np.min(dpl ** 2 + (tot_out2[:, None] - dout ** 2), axis=1)
    if d == 3:
        seg2 = np.full(len(vs), np.iinfo(np.int64).max)
        for i, j in ((0, 1), (0, 2), (1, 2)):
            m = 3 - i - j
            seg2 = np.minimum(seg2, dpl[:, i] ** 2 + dpl[:, j] ** 2 + dout[:, m] ** 2)
    else:
        seg2 = dpl[:, 0] ** 2 + dpl[:, 1] ** 2
    thr = cfg.coarse ** 2
    out[:] = "stitch-edge-or-corner"
    out[seg2 > thr] = "stitch-face"
    out[face2 > thr] = "interior"
    return out


def _moments(g: WeightedGraph, vs: np.ndarray, iw: np.ndarray):
    """Integer moment sums (total, first, second, third) for each vertex in vs."""
    ip = _require_ipos(g)
    d = g.dim
    starts, ends = g.indptr[vs], g.indptr[vs + 1]
    cnt = ends - starts
    arcs = np.concatenate([np.arange(a, b) for a, b in zip(starts, ends)]) if len(vs) else np.zeros(0, np.int64)
    owner = np.repeat(np.arange(len(vs)), cnt)
    disp = ip[g.indices[arcs]] - ip[vs][owner]
    w = iw[arcs]
    tot = np.zeros(len(vs), dtype=np.int64)
    np.add.at(tot, owner, w)
    m1 = np.zeros((len(vs), d), dtype=np.int64)
    m2 = np.zeros((len(vs), d, d), dtype=np.int64)
    m3 = np.zeros((len(vs), d, d, d), dtype=np.int64)
    for i in range(d):
        np.add.at(m1[:, i], owner, w * disp[:, i])
        for j in range(d):
            np.add.at(m2[:, i, j], owner, w * disp[:, i] * disp[:, j])
            for l in range(d):
                np.add.at(m3[:, i, j, l], owner, w * disp[:, i] * disp[:, j] * disp[:, l])
    return tot, m1, m2, m3


def moment_certificate(g: WeightedGraph, v: int, cfg: StitchConfig | None = None) -> MomentCertificate:
    """Exact moments of the one-step displacement law at v."""
    v = g.check_vertex(v)
    if g.frontier[v]:
        raise GraphError(f"vertex {v} is on the frontier; its neighbourhood is truncated")
    iw = _arc_int_weights(g)
    tot, m1, m2, m3 = _moments(g, np.array([v]), iw)
    T = int(tot[0])
    d = g.dim
    mean = tuple(Fraction(int(x), T) for x in m1[0])
    second = tuple(tuple(Fraction(int(m2[0, i, j]), T) for j in range(d)) for i in range(d))
    third = {(i, j, l): Fraction(int(m3[0, i, j, l]), T)
             for i in range(d) for j in range(i, d) for l in range(j, d)}
    return MomentCertificate(v, vertex_class(g, v, cfg), mean, second, third)


@dataclass
class CertificationReport:
    checked: int
    skipped_frontier: int
    by_class: dict
    violations: dict
    worst_mean: dict

    @property
    def passed(self) -> bool:
        return all(n == 0 for n in self.violations.values())

    def rows(self):
        for c in sorted(self.by_class):
            yield {"class": c, "vertices": self.by_class[c],
                   "mean_violations": self.violations.get((c, "mean"), 0),
                   "isotropy_violations": self.violations.get((c, "second"), 0),
                   "third_violations": self.violations.get((c, "third"), 0),
                   "worst_mean": str(self.worst_mean.get(c, Fraction(0)))}


def certify_lattice(g: WeightedGraph, sample="all", cfg: StitchConfig | None = None, seed: int = 0,
                    chunk: int = 20000) -> CertificationReport:
    """Exact moment sweep.

    ``sample`` is "all", an int (uniform sample of that many non-frontier
    vertices) or an explicit id array.  Every checked vertex must have
    zero mean step; interior vertices must also have isotropic second and
    vanishing third moments.
    """
    cand = np.flatnonzero(~g.frontier)
    skipped = g.n - cand.size
    if isinstance(sample, str):
        if sample != "all":
            raise ValueError("sample must be 'all', a count or an id array")
        vs = cand
    elif np.isscalar(sample):
        rng = np.random.default_rng(seed)
        vs = np.sort(rng.choice(cand, size=min(int(sample), cand.size), replace=False))
    else:
        vs = np.asarray(sample, dtype=np.int64)
        if np.any(g.frontier[vs]):
            raise GraphError("sample contains frontier vertices")
    iw = _arc_int_weights(g)
    by_class: dict = {}
    viol: dict = {}
    worst: dict = {}
    d = g.dim
    for a in range(0, len(vs), chunk):
        part = vs[a:a + chunk]
        cls = classify_vertices(g, part, cfg)
        tot, m1, m2, m3 = _moments(g, part, iw)
        bad_mean = np.any(m1 != 0, axis=1)
        diag = m2[:, np.arange(d), np.arange(d)]
        off = m2.copy()
        off[:, np.arange(d), np.arange(d)] = 0
        bad_second = np.any(off != 0, axis=(1, 2)) | np.any(diag != diag[:, :1], axis=1)
        bad_third = np.any(m3.reshape(len(part), -1) != 0, axis=1)
        for c in np.unique(cls):
            sel = cls == c
            by_class[c] = by_class.get(c, 0) + int(sel.sum())
            viol[(c, "mean")] = viol.get((c, "mean"), 0) + int(bad_mean[sel].sum())
            if c == "interior":
                viol[(c, "second")] = viol.get((c, "second"), 0) + int(bad_second[sel].sum())
                viol[(c, "third")] = viol.get((c, "third"), 0) + int(bad_third[sel].sum())
            for i in np.flatnonzero(sel & bad_mean):
                m = max(Fraction(abs(int(x)), int(tot[i])) for x in m1[i])
                worst[c] = max(worst.get(c, Fraction(0)), m)
    return CertificationReport(len(vs), skipped, by_class, viol, worst)
