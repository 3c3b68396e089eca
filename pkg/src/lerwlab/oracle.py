"""Exact linear algebra on small graphs: harmonic extension, Green's
functions, hitting distributions, the law of the loop erasure and Martin
capacity.

Three solver tiers: exact rational elimination (graphs carrying exact
weights, systems up to ``EXACT_MAX`` unknowns), dense floating point (up
to ``DENSE_MAX``), and sparse beyond that.  The sparse tier factorizes
moderate systems and runs conjugate gradients on large ones; the matrix
is always the symmetric positive definite weighted Laplacian restricted
to the domain.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graph import WeightedGraph, vertex_set

EXACT_MAX = 200
DENSE_MAX = 5000
SPLU_MAX = 60000
NODE_BUDGET = 10**7


class OracleError(RuntimeError):
    pass


class BudgetExceeded(OracleError):
    pass


def _mode(g: WeightedGraph, n: int, mode: str) -> str:
    if mode == "auto":
        return "exact" if g.is_exact and n <= EXACT_MAX else "float"
    if mode == "exact":
        if not g.is_exact:
            raise OracleError("exact mode needs exact weights")
        return "exact"
    if mode != "float":
        raise ValueError(f"unknown mode {mode!r}")
    return "float"


# -- exact sparse elimination --------------------------------------------

def _exact_solve(rows, rhs):
    """Solve M y = b for each column of b; M given as list of {col: Fraction}.

    Plain Gaussian elimination in the given order.  The matrices here are
    restricted Laplacians (non-singular M-matrices), whose diagonal pivots
    never vanish, so no pivoting is needed.  ``rhs`` is a list of
    {row: Fraction} columns.
    """
    n = len(rows)
    A = [dict(r) for r in rows]
    B = [dict() for _ in range(n)]
    for k, col in enumerate(rhs):
        for i, x in col.items():
            if x:
                B[i][k] = x
    # rows below k that have an entry in column k
    below = [set() for _ in range(n)]
    for i, r in enumerate(A):
        for j in r:
            if j < i:
                below[j].add(i)
    for k in range(n):
        piv = A[k].get(k)
        if not piv:
            raise OracleError("singular system (component without an exit)")
        rk = A[k]
        bk = B[k]
        for i in sorted(below[k]):
            ri = A[i]
            f = ri.pop(k) / piv
            for j, x in rk.items():
                if j <= k:
                    continue
                y = ri.get(j, 0) - f * x
                if y:
                    ri[j] = y
                else:
                    ri.pop(j, None)
                if j > i:
                    pass
                elif j < i and j > k:
                    below[j].add(i)
            bi = B[i]
            for c, x in bk.items():
                y = bi.get(c, 0) - f * x
                if y:
                    bi[c] = y
                else:
                    bi.pop(c, None)
    X = [[Fraction(0)] * len(rhs) for _ in range(n)]
    for k in range(n - 1, -1, -1):
        rk = A[k]
        for c in range(len(rhs)):
            s = B[k].get(c, Fraction(0))
            for j, x in rk.items():
                if j > k:
                    s -= x * X[j][c]
            X[k][c] = s / rk[k]
    return X


# -- restricted Laplacian ----------------------------------------------------

def _laplacian_rows_exact(g, S, idx):
    rows = []
    for v in S:
        ws = g.edge_weights(v, exact=True)
        r = {}
        tot = sum(ws, Fraction(0))
        diag = tot
        for w, x in zip(g.neighbors(v), ws):
            w = int(w)
            if w == v:
                diag -= x
            elif w in idx:
                r[idx[w]] = r.get(idx[w], 0) - x
        r[idx[v]] = diag
        rows.append(r)
    return rows


def _laplacian_sparse(g, S):
    """(D - W) restricted to S as CSR plus the S x V off-block W[S, :]."""
    S = np.asarray(S, dtype=np.int64)
    n = g.n
    pos = np.full(n, -1, dtype=np.int64)
    pos[S] = np.arange(S.size)
    indptr, indices, w = g.indptr, g.indices, g.weights
    cnt = indptr[S + 1] - indptr[S]
    arcs = np.concatenate([np.arange(indptr[v], indptr[v + 1]) for v in S]) if S.size else np.zeros(0, np.int64)
    rows = np.repeat(np.arange(S.size), cnt)
    cols = indices[arcs]
    ww = w[arcs]
    WSV = sp.csr_matrix((ww, (rows, cols)), shape=(S.size, n))
    tot = np.asarray(WSV.sum(axis=1)).ravel()
    inside = pos[cols] >= 0
    WSS = sp.csr_matrix((ww[inside], (rows[inside], pos[cols[inside]])), shape=(S.size, S.size))
    M = sp.diags(tot) - WSS
    return M.tocsr(), WSV


def _float_solve(M, b):
    n = M.shape[0]
    if n <= DENSE_MAX:
        return np.linalg.solve(M.toarray(), b)
    if n <= SPLU_MAX:
        return spla.splu(M.tocsc()).solve(np.asarray(b, dtype=float))
    b = np.asarray(b, dtype=float)
    cols = b.reshape(n, -1)
    dinv = 1.0 / M.diagonal()
    pre = spla.LinearOperator(M.shape, matvec=lambda x: dinv * x)
    out = np.empty_like(cols)
    for j in range(cols.shape[1]):
        x, info = spla.cg(M, cols[:, j], rtol=1e-14, atol=0.0, maxiter=100000, M=pre)
        if info != 0:
            raise OracleError("conjugate gradients did not converge")
        out[:, j] = x
    return out.reshape(b.shape)


def _component_exits(g, S_mask, boundary_mask):
    """Check that every component of S (induced) touches the boundary set."""
    seen = np.zeros(g.n, dtype=bool)
    for s in np.flatnonzero(S_mask):
        if seen[s]:
            continue
        comp_ok = False
        q = deque([s])
        seen[s] = True
        while q:
            x = q.popleft()
            for y in g.neighbors(x):
                if boundary_mask[y]:
                    comp_ok = True
                elif S_mask[y] and not seen[y]:
                    seen[y] = True
                    q.append(y)
        if not comp_ok:
            raise OracleError(f"component containing vertex {s} never reaches the boundary")


# -- harmonic extension ---------------------------------------------------

def harmonic_solve(g: WeightedGraph, boundary: dict, interior, mode="auto") -> dict:
    """Unique f harmonic on ``interior`` with the given values on its
    external boundary.  Returns {vertex: value} over interior and boundary."""
    A = [int(v) for v in vertex_set(interior)]
    Amask = np.zeros(g.n, dtype=bool)
    Amask[A] = True
    bmask = np.zeros(g.n, dtype=bool)
    for v in boundary:
        bmask[int(v)] = True
    for v in A:
        for w in g.neighbors(v):
            if not Amask[w] and not bmask[w]:
                raise OracleError(f"boundary value missing for vertex {int(w)}")
    _component_exits(g, Amask, bmask & ~Amask)
    idx = {v: i for i, v in enumerate(A)}
    out = {int(k): val for k, val in boundary.items()}
    if not A:
        return out
    m = _mode(g, len(A), mode)
    if m == "exact":
        rows = _laplacian_rows_exact(g, A, idx)
        rhs = {}
        for i, v in enumerate(A):
            s = Fraction(0)
            for w, x in zip(g.neighbors(v), g.edge_weights(v, exact=True)):
                w = int(w)
                if w not in idx:
                    s += x * Fraction(boundary[w])
            if s:
                rhs[i] = s
        X = _exact_solve(rows, [rhs])
        for i, v in enumerate(A):
            out[v] = X[i][0]
        return out
    M, WSV = _laplacian_sparse(g, A)
    fb = np.zeros(g.n)
    for k, val in boundary.items():
        fb[int(k)] = float(val)
    fb[A] = 0.0
    y = _float_solve(M, WSV @ fb)
    for i, v in enumerate(A):
        out[v] = float(y[i])
    return out


# -- Green's function ------------------------------------------------------

@dataclass
class GreenMatrix:
    domain: np.ndarray
    values: object  # list of lists of Fractions, or ndarray
    exact: bool

    def __call__(self, v, w):
        i = np.searchsorted(self.domain, v)
        j = np.searchsorted(self.domain, w)
        if i >= self.domain.size or self.domain[i] != v or j >= self.domain.size or self.domain[j] != w:
            return Fraction(0) if self.exact else 0.0
        return self.values[i][j]


def greens_function(g: WeightedGraph, S, mode="auto") -> GreenMatrix:
    """G(v, w; S): expected visits to w before leaving S, for v, w in S."""
    S = vertex_set(S)
    Smask = np.zeros(g.n, dtype=bool)
    Smask[S] = True
    _component_exits(g, Smask, ~Smask)
    m = _mode(g, S.size, mode)
    if m == "exact":
        idx = {int(v): i for i, v in enumerate(S)}
        rows = _laplacian_rows_exact(g, [int(v) for v in S], idx)
        # G = (D - W)^-1 D ; columns e_j * omega(j)
        tot = [sum(g.edge_weights(int(v), exact=True), Fraction(0)) for v in S]
        X = _exact_solve(rows, [{j: tot[j]} for j in range(S.size)])
        return GreenMatrix(S, X, True)
    if S.size > DENSE_MAX:
        raise OracleError(f"dense Green matrix limited to {DENSE_MAX} vertices")
    M, WSV = _laplacian_sparse(g, S)
    tot = np.asarray(WSV.sum(axis=1)).ravel()
    X = np.linalg.solve(M.toarray(), np.diag(tot))
    return GreenMatrix(S, X, False)


# -- hitting distributions -----------------------------------------------

@dataclass
class HitVector:
    start: int
    absorbing: np.ndarray
    probs: object  # list of Fractions or ndarray aligned with absorbing

    def as_dict(self):
        return {int(a): p for a, p in zip(self.absorbing, self.probs)}

    def total(self):
        return sum(self.probs, Fraction(0)) if isinstance(self.probs, list) else float(np.sum(self.probs))


def _reachable(g, start, stop_mask, first_step):
    """Non-stopping vertices reachable from start without entering stop set."""
    seen = np.zeros(g.n, dtype=bool)
    q = deque()
    if first_step:
        for w in g.neighbors(start):
            if not stop_mask[w] and not seen[w]:
                seen[w] = True
                q.append(int(w))
    else:
        seen[start] = True
        q.append(start)
    while q:
        x = q.popleft()
        for y in g.neighbors(x):
            if not stop_mask[y] and not seen[y]:
                seen[y] = True
                q.append(int(y))
    return seen


def hitting_distribution(g: WeightedGraph, start, absorbing, mode="auto", weights=None) -> HitVector:
    """P^start(R(T(A)) = a) with T(A) = min{t >= 1 : R(t) in A}.

    ``weights`` optionally attaches a value per absorbing vertex; the result
    then also carries ``HitVector.probs`` unchanged (values are applied by
    the caller)."""
    start = g.check_vertex(start)
    A = vertex_set(absorbing)
    if A.size == 0:
        raise OracleError("empty absorbing set")
    Amask = np.zeros(g.n, dtype=bool)
    Amask[A] = True
    s_in = bool(Amask[start])
    S_mask = _reachable(g, start, Amask, first_step=s_in)
    S = np.flatnonzero(S_mask)
    if S.size:
        _component_exits(g, S_mask, Amask)
    elif not any(Amask[w] for w in g.neighbors(start)):
        raise OracleError("absorbing set unreachable")
    aidx = {int(a): i for i, a in enumerate(A)}
    m = _mode(g, S.size, mode)
    if m == "exact":
        idx = {int(v): i for i, v in enumerate(S)}
        probs = [Fraction(0)] * A.size
        ws0 = g.edge_weights(start, exact=True)
        tot0 = sum(ws0, Fraction(0))
        if s_in:
            b = {}
            for w, x in zip(g.neighbors(start), ws0):
                w = int(w)
                if w in idx:
                    b[idx[w]] = b.get(idx[w], 0) + x / tot0
                elif w in aidx:
                    probs[aidx[w]] += x / tot0
        else:
            b = {idx[start]: Fraction(1)}
        if S.size:
            rows = _laplacian_rows_exact(g, [int(v) for v in S], idx)
            y = _exact_solve(rows, [b])
            for i, v in enumerate(S):
                if y[i][0] == 0:
                    continue
                for w, x in zip(g.neighbors(v), g.edge_weights(int(v), exact=True)):
                    j = aidx.get(int(w))
                    if j is not None:
                        probs[j] += y[i][0] * x
        return HitVector(start, A, probs)
    probs = np.zeros(A.size)
    nb = g.neighbors(start)
    ws0 = g.edge_weights(start)
    P0 = ws0 / ws0.sum()
    if S.size:
        M, WSV = _laplacian_sparse(g, S)
        pos = np.full(g.n, -1, dtype=np.int64)
        pos[S] = np.arange(S.size)
        b = np.zeros(S.size)
        if s_in:
            ok = pos[nb] >= 0
            np.add.at(b, pos[nb[ok]], P0[ok])
        else:
            b[pos[start]] = 1.0
        y = _float_solve(M, b)
        flow = WSV.T @ y  # sum_v y(v) omega(v, .)
        probs += flow[A]
    if s_in:
        for w, p in zip(nb, P0):
            j = aidx.get(int(w))
            if j is not None:
                probs[j] += p
    return HitVector(start, A, probs)


def hit_probability(g: WeightedGraph, start, targets, sink, mode="auto"):
    """P^start(hit targets before sink), time 0 included."""
    start = g.check_vertex(start)
    T = set(int(x) for x in vertex_set(targets))
    if start in T:
        return Fraction(1) if _mode(g, 1, mode) == "exact" else 1.0
    K = set(int(x) for x in vertex_set(sink)) - T
    stop = np.zeros(g.n, dtype=bool)
    stop[list(T | K)] = True
    S_mask = _reachable(g, start, stop, first_step=False)
    S = np.flatnonzero(S_mask)
    bval = {a: 1 for a in T}
    bval.update({k: 0 for k in K})
    bound = {}
    for v in S:
        for w in g.neighbors(v):
            w = int(w)
            if not S_mask[w]:
                if w not in bval:
                    raise OracleError("boundary of the reachable set is neither target nor sink")
                bound[w] = Fraction(bval[w]) if _mode(g, S.size, mode) == "exact" else float(bval[w])
    f = harmonic_solve(g, bound, S, mode=mode)
    return f[start]


# -- law of the loop erasure ---------------------------------------------

def _avoid_prob(g, tip, gamma, absorbing, forbidden, target, mode):
    """h(x) for neighbours x of tip: walk from x reaches the absorbing set
    (at ``target`` if given) before gamma and forbidden, time 0 included."""
    A = absorbing
    stop = np.zeros(g.n, dtype=bool)
    stop[list(A)] = True
    blocked = set(gamma) | set(forbidden)
    for b in blocked:
        stop[b] = True
    nbrs = [int(x) for x in g.neighbors(tip)]
    free = np.zeros(g.n, dtype=bool)
    for x in nbrs:
        if not stop[x] and not free[x]:
            free |= _reachable(g, x, stop, first_step=False)
    S = np.flatnonzero(free)
    exact = _mode(g, S.size, mode) == "exact"
    one, zero = (Fraction(1), Fraction(0)) if exact else (1.0, 0.0)

    def bval(w):
        if w in A:
            return one if (target is None or w == target) else zero
        return zero

    if S.size == 0:
        return {x: bval(x) for x in nbrs}
    bound = {}
    for v in S:
        for w in g.neighbors(v):
            w = int(w)
            if not free[w]:
                bound[w] = bval(w)
    # components without an absorbing exit carry h = 0; give them a value by
    # linking them to the blocked set, which they necessarily touch
    f = harmonic_solve(g, bound, S, mode="exact" if exact else "float")
    return {x: (bval(x) if (x in A or x in blocked) else f[x]) for x in nbrs}


def laplacian_walk_step(g: WeightedGraph, gamma, absorbing, forbidden=(), target=None, mode="auto") -> dict:
    """Law of the next vertex of the loop erasure given its prefix ``gamma``.

    P(next = x) is proportional to omega(tip, x) h(x), h(x) the probability
    that a walk from x reaches the absorbing set (at ``target`` if given)
    before returning to gamma or meeting ``forbidden``."""
    gamma = [int(v) for v in gamma]
    if not gamma:
        raise ValueError("empty prefix")
    tip = gamma[-1]
    A = set(int(a) for a in vertex_set(absorbing))
    h = _avoid_prob(g, tip, gamma, A, set(int(b) for b in forbidden), target, mode)
    exact = _mode(g, 1, mode) == "exact" and all(isinstance(x, Fraction) for x in h.values())
    ws = g.edge_weights(tip, exact=exact)
    law = {}
    for x, w in zip(g.neighbors(tip), ws):
        x = int(x)
        p = w * h[x]
        if p:
            law[x] = law.get(x, 0) + p
    tot = sum(law.values(), Fraction(0) if exact else 0.0)
    if not tot:
        raise OracleError(f"tip {tip} is trapped: no admissible continuation")
    return {x: p / tot for x, p in sorted(law.items())}


def exact_lerw_law(g: WeightedGraph, start, absorbing, forbidden=(), target=None, mode="auto",
                   budget: int = NODE_BUDGET) -> dict:
    """Exact law of LE(R[0, T(A)]) as {path tuple: probability}.

    Iterates ``laplacian_walk_step`` over every prefix; ``target``
    conditions the walk to stop at that vertex, ``forbidden`` conditions it
    to avoid a set.  Raises BudgetExceeded past ``budget`` prefixes."""
    start = g.check_vertex(start)
    A = set(int(a) for a in vertex_set(absorbing))
    if target is not None and int(target) not in A:
        raise OracleError("target must belong to the absorbing set")
    out = {}
    nodes = 0
    one = Fraction(1) if _mode(g, 1, mode) == "exact" else 1.0
    stack = [((start,), one)]
    while stack:
        gamma, p = stack.pop()
        nodes += 1
        if nodes > budget:
            raise BudgetExceeded(f"more than {budget} prefixes")
        if len(gamma) > 1 and gamma[-1] in A:
            out[gamma] = out.get(gamma, 0) + p
            continue
        law = laplacian_walk_step(g, gamma, A, forbidden, target, mode)
        for x, q in law.items():
            if x in A:
                path = gamma + (x,)
                out[path] = out.get(path, 0) + p * q
            else:
                stack.append((gamma + (x,), p * q))
    return dict(sorted(out.items()))


def stack_chain_law(g: WeightedGraph, start, absorbing=(), count_vertex=None, n_visits=1, forbidden=(),
                    budget: int = 200000) -> dict:
    """Law of the loop erasure by a different route: the Markov chain of
    (erased stack, visits so far) driven by single walk steps, solved
    exactly.  The walk stops on the absorbing set (t >= 1) or at the
    ``n_visits``-th visit to ``count_vertex``; entering ``forbidden`` kills
    it.  Returns {(path, end vertex): probability} including killed mass
    under the key None."""
    g._require_exact()
    A = set(int(a) for a in vertex_set(absorbing))
    F = set(int(b) for b in forbidden)
    start = g.check_vertex(start)
    P = {v: list(zip((int(w) for w in g.neighbors(v)), g.edge_weights(v, exact=True))) for v in range(g.n)}
    tot = {v: sum((x for _, x in P[v]), Fraction(0)) for v in range(g.n)}
    init = ((start,), 0)
    index = {init: 0}
    states = [init]
    trans = []  # per state: list of (next state index | terminal key, prob)
    terminals = {}
    i = 0
    while i < len(states):
        (stk, k) = states[i]
        v = stk[-1]
        out = []
        for w, x in P[v]:
            p = x / tot[v]
            if w in stk:
                nstk = stk[:stk.index(w) + 1]
            else:
                nstk = stk + (w,)
            nk = k + (1 if w == count_vertex else 0)
            if w in F:
                key = None
            elif w in A or (count_vertex is not None and nk == n_visits):
                key = (nstk, w)
            else:
                key = ("s", (nstk, nk))
            if key is not None and key[0] == "s":
                st = key[1]
                if st not in index:
                    index[st] = len(states)
                    states.append(st)
                    if len(states) > budget:
                        raise BudgetExceeded("stack chain state space too large")
                out.append((index[st], p))
            else:
                if key not in terminals:
                    terminals[key] = len(terminals)
                out.append((("t", terminals[key]), p))
        trans.append(out)
        i += 1
    n = len(states)
    # occupation measure y solves y (I - Q) = e_init, i.e. (I - Q)^T y = e_init
    rows = [dict() for _ in range(n)]
    for i in range(n):
        rows[i][i] = rows[i].get(i, 0) + Fraction(1)
    for i, out in enumerate(trans):
        for j, p in out:
            if isinstance(j, tuple):
                continue
            rows[j][i] = rows[j].get(i, 0) - p
    y = _exact_solve(rows, [{0: Fraction(1)}])
    law = {}
    keys = {v: k for k, v in terminals.items()}
    for i, out in enumerate(trans):
        yi = y[i][0]
        if not yi:
            continue
        for j, p in out:
            if isinstance(j, tuple):
                key = keys[j[1]]
                law[key] = law.get(key, 0) + yi * p
    return law


# -- Martin capacity --------------------------------------------------------

@dataclass
class CapacityReport:
    source: int
    targets: np.ndarray
    capacity: float
    measure: np.ndarray
    kernel: np.ndarray
    hit_probability: object
    energy: float
    gap: float
    sandwich: bool = field(default=False)


def _simplex_projection(y):
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    k = np.nonzero(u * np.arange(1, y.size + 1) > (css - 1))[0][-1]
    tau = (css[k] - 1) / (k + 1)
    return np.maximum(y - tau, 0)


def _min_energy(K, max_enum=12, iters=20000, tol=1e-10):
    """Global minimum of mu^T K mu over the probability simplex.

    The kernel need not be positive semi-definite, so for small supports
    every face is examined (KKT point of each face); otherwise projected
    gradient from several starts.  Returns (value, mu, gap)."""
    Ks = 0.5 * (K + K.T)
    n = Ks.shape[0]
    best, arg = np.inf, None
    if n <= max_enum:
        for k in range(1, n + 1):
            for sub in itertools.combinations(range(n), k):
                sub = list(sub)
                Q = Ks[np.ix_(sub, sub)]
                try:
                    z = np.linalg.solve(Q, np.ones(k))
                except np.linalg.LinAlgError:
                    continue
                if not np.all(np.isfinite(z)) or z.sum() <= 0:
                    continue
                mu = z / z.sum()
                if np.any(mu < -1e-14):
                    continue
                mu = np.clip(mu, 0, None)
                m = np.zeros(n)
                m[sub] = mu / mu.sum()
                val = m @ Ks @ m
                if val < best:
                    best, arg = val, m
        grad = 2 * Ks @ arg
        gap = float(arg @ grad - grad.min())
        return float(best), arg, gap
    L = 2 * np.abs(np.linalg.eigvalsh(Ks)).max() + 1e-300
    starts = [np.full(n, 1.0 / n)] + [np.eye(n)[i] for i in range(n)]
    for mu in starts:
        for _ in range(iters):
            grad = 2 * Ks @ mu
            nmu = _simplex_projection(mu - grad / L)
            if np.abs(nmu - mu).max() < 1e-15:
                mu = nmu
                break
            mu = nmu
        val = mu @ Ks @ mu
        if val < best:
            best, arg = val, mu
    grad = 2 * Ks @ arg
    gap = float(arg @ grad - grad.min())
    return float(best), arg, gap


def martin_capacity(g: WeightedGraph, source, sink, S, mode="auto") -> CapacityReport:
    """Martin capacity of S seen from ``source`` for the walk killed at ``sink``.

    Kernel K(w, x) = G(w, x) / G(source, x), G the Green's function of the
    complement of the sink.  The report carries the exact hitting
    probability P^source(hit S before sink) and the check
    cap/2 <= P <= cap."""
    source = g.check_vertex(source)
    S = vertex_set(S)
    sink = vertex_set(sink)
    if np.intersect1d(S, sink).size:
        raise OracleError("targets must avoid the sink")
    dom_mask = np.ones(g.n, dtype=bool)
    dom_mask[sink] = False
    dom = _reachable(g, source, ~dom_mask, first_step=False)
    dom_idx = np.flatnonzero(dom)
    if not np.all(dom[S]):
        raise OracleError("some targets are unreachable from the source (infinite kernel)")
    G = greens_function(g, dom_idx, mode=mode)
    i_src = np.searchsorted(dom_idx, source)
    cols = np.searchsorted(dom_idx, S)
    if G.exact:
        Gf = [[G.values[int(a)][int(b)] for b in cols] for a in cols]
        Gv = [G.values[i_src][int(b)] for b in cols]
        K = np.array([[float(Gf[a][b] / Gv[b]) for b in range(len(cols))] for a in range(len(cols))])
    else:
        Gs = np.asarray(G.values)
        Gv = Gs[i_src, cols]
        if np.any(Gv <= 0):
            raise OracleError("infinite kernel entries")
        K = Gs[np.ix_(cols, cols)] / Gv[None, :]
    energy, mu, gap = _min_energy(K)
    cap = 1.0 / energy
    p = hit_probability(g, source, S, sink, mode=mode)
    pf = float(p)
    ok = 0.5 * cap - 1e-8 <= pf <= cap + 1e-8
    return CapacityReport(source, S, cap, mu, K, p, energy, gap, ok)
