"""Compiled walk kernels.

A graph is handed to the kernels as the tuple ``gv`` produced by
``WeightedGraph.kernel_view``:

    (kind, indptr, indices, cumprob, pos, frontier, shape, strides, first, spacing)

kind 0 walks the CSR arrays (binary search on cumulative transition
probabilities); kind 1 walks an implicit box of spacing*Z^d, where a step
is a uniform choice of one of the 2d axis moves.  Every kernel takes one
key per trial and numbers its draws from 0, so trial t is a pure function
of its key.

Stop codes: 0 hit absorbing set, 1 left a radius, 2 step cap, 3 frontier.
"""
import numba as nb
import numpy as np

from .rng import draw_uniform

HIT, EXITED, CAPPED, FRONTIER = 0, 1, 2, 3

_FIB = np.uint64(0x9E3779B97F4A7C15)


# -- open-addressing hash map (int64 -> int64) without deletion -------------
# state: keys, vals, stamp arrays and meta = [mask, count, generation].
# Entries from older generations read as empty, so clearing is O(1).

@nb.njit(cache=True, nogil=True)
def hm_new(cap):
    c = 16
    while c < 2 * cap:
        c *= 2
    meta = np.empty(3, np.int64)
    meta[0] = c - 1
    meta[1] = 0
    meta[2] = 1
    return np.zeros(c, np.int64), np.zeros(c, np.int64), np.zeros(c, np.int64), meta


@nb.njit(inline="always")
def _slot(k, mask):
    return np.int64((np.uint64(k) * _FIB) >> np.uint64(20)) & mask


@nb.njit(cache=True, nogil=True)
def hm_get(keys, vals, stamp, meta, k):
    mask = meta[0]
    g = meta[2]
    i = _slot(k, mask)
    while stamp[i] == g:
        if keys[i] == k:
            return vals[i]
        i = (i + 1) & mask
    return -1


@nb.njit(cache=True, nogil=True)
def _hm_put(keys, vals, stamp, meta, k, val):
    mask = meta[0]
    g = meta[2]
    i = _slot(k, mask)
    while stamp[i] == g:
        if keys[i] == k:
            vals[i] = val
            return
        i = (i + 1) & mask
    stamp[i] = g
    keys[i] = k
    vals[i] = val
    meta[1] += 1


@nb.njit(cache=True, nogil=True)
def hm_set(keys, vals, stamp, meta, k, val):
    """Insert or overwrite; returns the (possibly regrown) arrays."""
    _hm_put(keys, vals, stamp, meta, k, val)
    if 2 * meta[1] > meta[0]:
        g = meta[2]
        ok, ov, os_ = keys, vals, stamp
        c = 2 * (meta[0] + 1)
        keys = np.zeros(c, np.int64)
        vals = np.zeros(c, np.int64)
        stamp = np.zeros(c, np.int64)
        meta[0] = c - 1
        meta[1] = 0
        for i in range(ok.size):
            if os_[i] == g:
                _hm_put(keys, vals, stamp, meta, ok[i], ov[i])
    return keys, vals, stamp


@nb.njit(cache=True, nogil=True)
def hm_clear(meta):
    meta[1] = 0
    meta[2] += 1


@nb.njit(cache=True, nogil=True)
def _grow(buf, n):
    if n < buf.size:
        return buf
    out = np.empty(2 * buf.size + 16, buf.dtype)
    out[:buf.size] = buf
    return out


# -- stepping ---------------------------------------------------------------

@nb.njit(inline="always")
def _is_frontier(gv, v, rel):
    if gv[0] == 1:
        shape = gv[6]
        for a in range(rel.size):
            if rel[a] == 0 or rel[a] == shape[a] - 1:
                return True
        return False
    return gv[5][v]


@nb.njit(inline="always")
def _step(gv, v, x, rel, u):
    """Advance one step; returns (new vertex, frontier flag of it)."""
    if gv[0] == 1:
        d = rel.size
        j = np.int64(u * 2 * d)
        if j >= 2 * d:
            j = 2 * d - 1
        a = j >> 1
        shape = gv[6]
        if j & 1:
            v -= gv[7][a]
            rel[a] -= 1
            x[a] -= gv[9]
        else:
            v += gv[7][a]
            rel[a] += 1
            x[a] += gv[9]
        return v, rel[a] == 0 or rel[a] == shape[a] - 1
    indptr, indices, cum, pos = gv[1], gv[2], gv[3], gv[4]
    lo = indptr[v]
    hi = indptr[v + 1] - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if cum[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    w = indices[lo]
    for a in range(x.size):
        x[a] = pos[w, a]
    return w, gv[5][w]


@nb.njit(inline="always")
def _outside(x, centers, r2):
    """Index of the first radius stop whose sphere x has reached, else -1."""
    for m in range(r2.size):
        s = 0.0
        for a in range(x.size):
            t = x[a] - centers[m, a]
            s += t * t
        if s >= r2[m]:
            return m
    return -1


@nb.njit(inline="always")
def _dist2(x, c):
    s = 0.0
    for a in range(x.size):
        t = x[a] - c[a]
        s += t * t
    return s


@nb.njit(cache=True, nogil=True)
def draw(key, ctr):
    return draw_uniform(key, ctr)


@nb.njit(cache=True, nogil=True)
def single_step(gv, v, rel, x, key, ctr):
    u = draw_uniform(key, ctr)
    w, fr = _step(gv, v, x.copy(), rel.copy(), u)
    return w


# -- plain walks --------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def walk_path(gv, start, rel0, x0, absmask, centers, r2, cap, key):
    """One walk until a stop condition; returns (path, code)."""
    rel = rel0.copy()
    x = x0.copy()
    path = np.empty(1024, np.int64)
    path[0] = start
    n = 1
    v = start
    if _is_frontier(gv, v, rel):
        return path[:1], FRONTIER
    for t in range(cap):
        u = draw_uniform(key, t)
        v, fr = _step(gv, v, x, rel, u)
        path = _grow(path, n)
        path[n] = v
        n += 1
        if absmask.size > 0 and absmask[v]:
            return path[:n], HIT
        if _outside(x, centers, r2) >= 0:
            return path[:n], EXITED
        if fr:
            return path[:n], FRONTIER
    return path[:n], CAPPED


@nb.njit(cache=True, nogil=True)
def walk_batch(gv, start, rel0, x0, absmask, centers, r2, cap, keys, erase):
    """Many walks from one start.  With ``erase`` only the loop erasures are kept.

    Returns (flat vertex array, offsets, codes, steps)."""
    T = keys.size
    out = np.empty(4096, np.int64)
    offs = np.zeros(T + 1, np.int64)
    codes = np.empty(T, np.int64)
    steps = np.empty(T, np.int64)
    keys_, vals_, stamp_, meta = hm_new(1024)
    stack = np.empty(1024, np.int64)
    for i in range(T):
        p, c = walk_path(gv, start, rel0, x0, absmask, centers, r2, cap, keys[i])
        codes[i] = c
        steps[i] = p.size - 1
        if erase:
            hm_clear(meta)
            top = 0
            for t in range(p.size):
                w = p[t]
                j = hm_get(keys_, vals_, stamp_, meta, w)
                if j >= 0 and j < top and stack[j] == w:
                    top = j + 1
                else:
                    stack = _grow(stack, top)
                    stack[top] = w
                    keys_, vals_, stamp_ = hm_set(keys_, vals_, stamp_, meta, w, top)
                    top += 1
            seg = stack[:top]
        else:
            seg = p
        while out.size < offs[i] + seg.size:
            out = _grow(out, out.size)
        out[offs[i]:offs[i] + seg.size] = seg
        offs[i + 1] = offs[i] + seg.size
    return out[:offs[T]], offs, codes, steps


@nb.njit(cache=True, nogil=True)
def loop_erase_array(path):
    """Chronological loop erasure of an arbitrary id sequence."""
    keys_, vals_, stamp_, meta = hm_new(path.size + 1)
    stack = np.empty(path.size, np.int64)
    top = 0
    for t in range(path.size):
        w = path[t]
        j = hm_get(keys_, vals_, stamp_, meta, w)
        if j >= 0 and j < top and stack[j] == w:
            top = j + 1
        else:
            stack[top] = w
            keys_, vals_, stamp_ = hm_set(keys_, vals_, stamp_, meta, w, top)
            top += 1
    return stack[:top].copy()


@nb.njit(cache=True, nogil=True)
def cut_times_array(path):
    """Indices i with path[0..i] and path[i+1..] disjoint."""
    n = path.size
    keys_, vals_, stamp_, meta = hm_new(n + 1)
    for t in range(n):
        keys_, vals_, stamp_ = hm_set(keys_, vals_, stamp_, meta, path[t], t)
    out = np.empty(n, np.int64)
    m = 0
    run = -1
    for t in range(n):
        last = hm_get(keys_, vals_, stamp_, meta, path[t])
        if last > run:
            run = last
        if run == t:
            out[m] = t
            m += 1
    return out[:m].copy()


# -- growth exponent ------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def growth_batch(gv, start, rel0, x0, center, radii2, cap, keys):
    """Length of LE(R[0, T_r]) for every radius r of an increasing list.

    One walk per trial runs to the largest radius; the online erasure's
    length is read off when each sphere is first reached."""
    T = keys.size
    nr = radii2.size
    lens = np.zeros((T, nr), np.int64)
    codes = np.zeros(T, np.int64)
    keys_, vals_, stamp_, meta = hm_new(4096)
    stack = np.empty(4096, np.int64)
    for i in range(T):
        rel = rel0.copy()
        x = x0.copy()
        hm_clear(meta)
        v = start
        stack[0] = v
        keys_, vals_, stamp_ = hm_set(keys_, vals_, stamp_, meta, v, 0)
        top = 1
        k = 0
        code = CAPPED
        if _is_frontier(gv, v, rel):
            codes[i] = FRONTIER
            continue
        key = keys[i]
        for t in range(cap):
            v, fr = _step(gv, v, x, rel, draw_uniform(key, t))
            j = hm_get(keys_, vals_, stamp_, meta, v)
            if j >= 0 and j < top and stack[j] == v:
                top = j + 1
            else:
                stack = _grow(stack, top)
                stack[top] = v
                keys_, vals_, stamp_ = hm_set(keys_, vals_, stamp_, meta, v, top)
                top += 1
            d2 = _dist2(x, center)
            while k < nr and d2 >= radii2[k]:
                lens[i, k] = top - 1
                k += 1
            if k == nr:
                code = EXITED
                break
            if fr:
                code = FRONTIER
                break
        codes[i] = code
    return lens, codes


# -- quasi-loops ----------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _build_boxes(P):
    """Implicit segment tree of bounding boxes over the rows of P."""
    n, d = P.shape
    size = 1
    while size < n:
        size *= 2
    lo = np.full((2 * size, d), np.inf)
    hi = np.full((2 * size, d), -np.inf)
    for i in range(n):
        for a in range(d):
            lo[size + i, a] = P[i, a]
            hi[size + i, a] = P[i, a]
    for i in range(size - 1, 0, -1):
        for a in range(d):
            lo[i, a] = min(lo[2 * i, a], lo[2 * i + 1, a])
            hi[i, a] = max(hi[2 * i, a], hi[2 * i + 1, a])
    return lo, hi, size


@nb.njit(cache=True, nogil=True)
def _range_nodes(a, b, size, buf):
    """Canonical segment-tree nodes covering index range [a, b]."""
    m = 0
    lo = a + size
    hi = b + size + 1
    while lo < hi:
        if lo & 1:
            buf[m] = lo
            m += 1
            lo += 1
        if hi & 1:
            hi -= 1
            buf[m] = hi
            m += 1
        lo >>= 1
        hi >>= 1
    return m


@nb.njit(cache=True, nogil=True)
def _far_pair(lo, hi, size, a, b, r2, buf, stk):
    """True iff two points with indices in [a, b] are at distance >= sqrt(r2)."""
    m = _range_nodes(a, b, size, buf)
    top = 0
    for i in range(m):
        for j in range(i, m):
            stk[top, 0] = buf[i]
            stk[top, 1] = buf[j]
            top += 1
    d = lo.shape[1]
    while top > 0:
        top -= 1
        p = stk[top, 0]
        q = stk[top, 1]
        far = 0.0
        near = 0.0
        for k in range(d):
            t = max(hi[p, k] - lo[q, k], hi[q, k] - lo[p, k])
            far += t * t
            g = max(lo[p, k] - hi[q, k], lo[q, k] - hi[p, k], 0.0)
            near += g * g
        if far < r2:
            continue
        if near >= r2:
            return True
        # split the node with the larger box (leaves cannot be split)
        sp = 0.0
        sq = 0.0
        for k in range(d):
            sp += (hi[p, k] - lo[p, k]) ** 2
            sq += (hi[q, k] - lo[q, k]) ** 2
        if p >= size and q >= size:
            continue
        if p == q:
            c = 2 * p
            stk[top, 0] = c
            stk[top, 1] = c
            stk[top + 1, 0] = c
            stk[top + 1, 1] = c + 1
            stk[top + 2, 0] = c + 1
            stk[top + 2, 1] = c + 1
            top += 3
        elif q >= size or (p < size and sp >= sq):
            stk[top, 0] = 2 * p
            stk[top, 1] = q
            stk[top + 1, 0] = 2 * p + 1
            stk[top + 1, 1] = q
            top += 2
        else:
            stk[top, 0] = p
            stk[top, 1] = 2 * q
            stk[top + 1, 0] = p
            stk[top + 1, 1] = 2 * q + 1
            top += 2
    return False


@nb.njit(cache=True, nogil=True)
def ql_count(P, s, r, origin):
    """Quasi-loop count of the point sequence P on the grid origin + (s/d) Z^d.

    For a centre v let a, b be the first and last indices with P in the open
    ball B(v, s); v counts iff diam P[a..b] >= r.  f(a), the least b with
    diam P[a..b] >= r, is non-decreasing, so a two-pointer pass with an
    exact far-pair test computes it; each centre is then an O(1) check."""
    n, d = P.shape
    if n < 2:
        return 0
    lo, hi, size = _build_boxes(P)
    buf = np.empty(128, np.int64)
    stk = np.empty((64 * 128 + 8192, 2), np.int64)
    r2 = r * r
    f = np.full(n, n, np.int64)
    b = 0
    for a in range(n):
        if b < a:
            b = a
        while b < n and not _far_pair(lo, hi, size, a, b, r2, buf, stk):
            b += 1
        f[a] = b
        if b >= n:
            for a2 in range(a + 1, n):
                f[a2] = n
            break
    # first/last visit index per grid centre
    h = s / d
    reach = np.int64(np.ceil(s / h)) + 1
    keys_, vals_, stamp_, meta = hm_new(4096)
    firsts = np.empty(4096, np.int64)
    lasts = np.empty(4096, np.int64)
    nc = 0
    idx = np.empty(d, np.int64)
    base = np.empty(d, np.int64)
    s2 = s * s
    span = 2 * reach + 1
    total = span ** d
    # pack centre indices into one int64 (offset keeps them non-negative)
    OFF = np.int64(1) << np.int64(20)
    for t in range(n):
        for a in range(d):
            base[a] = np.int64(np.floor((P[t, a] - origin[a]) / h)) - reach
        for c in range(total):
            rem = c
            dist = 0.0
            for a in range(d):
                idx[a] = base[a] + rem % span
                rem //= span
                z = origin[a] + idx[a] * h - P[t, a]
                dist += z * z
            if dist >= s2:
                continue
            key = np.int64(0)
            for a in range(d):
                key = key * (2 * OFF) + (idx[a] + OFF)
            j = hm_get(keys_, vals_, stamp_, meta, key)
            if j < 0:
                firsts = _grow(firsts, nc)
                lasts = _grow(lasts, nc)
                firsts[nc] = t
                lasts[nc] = t
                keys_, vals_, stamp_ = hm_set(keys_, vals_, stamp_, meta, key, nc)
                nc += 1
            else:
                lasts[j] = t
    cnt = 0
    for j in range(nc):
        if lasts[j] >= f[firsts[j]]:
            cnt += 1
    return cnt


@nb.njit(cache=True, nogil=True)
def ql_count_naive(P, s, r, origin):
    """O(n^2)-per-centre reference for ``ql_count``."""
    n, d = P.shape
    h = s / d
    lo = np.empty(d)
    hi_ = np.empty(d)
    for a in range(d):
        lo[a] = np.floor((P[:, a].min() - s - origin[a]) / h) - 1
        hi_[a] = np.ceil((P[:, a].max() + s - origin[a]) / h) + 1
    span = np.empty(d, np.int64)
    total = 1
    for a in range(d):
        span[a] = np.int64(hi_[a] - lo[a]) + 1
        total *= span[a]
    cnt = 0
    c = np.empty(d)
    for k in range(total):
        rem = k
        for a in range(d):
            c[a] = origin[a] + (lo[a] + rem % span[a]) * h
            rem //= span[a]
        first = -1
        last = -1
        for t in range(n):
            if _dist2(P[t], c) < s * s:
                if first < 0:
                    first = t
                last = t
        if first < 0 or last == first:
            continue
        hit = False
        for i in range(first, last + 1):
            for j in range(i + 1, last + 1):
                if _dist2(P[i], P[j]) >= r * r:
                    hit = True
                    break
            if hit:
                break
        if hit:
            cnt += 1
    return cnt


@nb.njit(cache=True, nogil=True)
def _vertex_positions(gv, ids, d):
    P = np.empty((ids.size, d))
    if gv[0] == 1:
        strides, first, sp = gv[7], gv[8], gv[9]
        for i in range(ids.size):
            rem = ids[i]
            for a in range(d):
                P[i, a] = first[a] + (rem // strides[a]) * sp
                rem = rem % strides[a]
    else:
        for i in range(ids.size):
            for a in range(d):
                P[i, a] = gv[4][ids[i], a]
    return P


@nb.njit(cache=True, nogil=True)
def vertex_positions(gv, ids, d):
    return _vertex_positions(gv, ids, d)


@nb.njit(cache=True, nogil=True)
def ql_batch(gv, start, rel0, x0, center, R2, cap, keys, s_list, r_list, origin):
    """Loop-erase walks stopped on leaving B(center, R) and count quasi-loops."""
    T = keys.size
    npairs = s_list.size
    counts = np.zeros((T, npairs), np.int64)
    lens = np.zeros(T, np.int64)
    codes = np.zeros(T, np.int64)
    absmask = np.zeros(0, np.bool_)
    centers = np.empty((1, center.size))
    centers[0] = center
    r2 = np.array([R2])
    d = x0.size
    for i in range(T):
        out, offs, c, st = walk_batch(gv, start, rel0, x0, absmask, centers, r2, cap, keys[i:i + 1], True)
        codes[i] = c[0]
        lens[i] = out.size - 1
        if c[0] != EXITED:
            continue
        P = _vertex_positions(gv, out, d)
        for k in range(npairs):
            counts[i, k] = ql_count(P, s_list[k], r_list[k], origin)
    return counts, lens, codes


# -- intersections, escape, exit times ------------------------------------

@nb.njit(cache=True, nogil=True)
def nonintersect_batch(gv, s1, rel1, x1, s2, rel2, x2, center, radii2, cap, keys1, keys2):
    """First radius index at which R1[0,T1_k] and R2[0,T2_k] meet (nr if never).

    T_k are the walks' own exit times from B(center, r_k).  The walks are
    extended alternately, one radius at a time, and every new visit is
    checked against the other walk's visited set, so a trial stops at the
    first radius where they meet."""
    T = keys1.size
    nr = radii2.size
    res = np.full(T, nr, np.int64)
    codes = np.zeros(T, np.int64)
    k1_, v1_, st1_, m1 = hm_new(4096)
    k2_, v2_, st2_, m2 = hm_new(4096)
    for i in range(T):
        hm_clear(m1)
        hm_clear(m2)
        ra = rel1.copy()
        xa = x1.copy()
        rb = rel2.copy()
        xb = x2.copy()
        va = s1
        vb = s2
        ta = 0
        tb = 0
        k1_, v1_, st1_ = hm_set(k1_, v1_, st1_, m1, va, 0)
        k2_, v2_, st2_ = hm_set(k2_, v2_, st2_, m2, vb, 0)
        code = EXITED
        if _is_frontier(gv, va, ra) or _is_frontier(gv, vb, rb):
            code = FRONTIER
        met = va == vb
        k = 0
        while k < nr and code == EXITED and not met:
            # walk 1 to the exit of ball k
            while _dist2(xa, center) < radii2[k]:
                if ta >= cap:
                    code = CAPPED
                    break
                va, fr = _step(gv, va, xa, ra, draw_uniform(keys1[i], ta))
                ta += 1
                if hm_get(k2_, v2_, st2_, m2, va) >= 0:
                    met = True
                if hm_get(k1_, v1_, st1_, m1, va) < 0:
                    k1_, v1_, st1_ = hm_set(k1_, v1_, st1_, m1, va, ta)
                if fr and _dist2(xa, center) < radii2[k]:
                    code = FRONTIER
                    break
            if code != EXITED:
                break
            # walk 2 to the exit of ball k
            while _dist2(xb, center) < radii2[k]:
                if tb >= cap:
                    code = CAPPED
                    break
                vb, fr = _step(gv, vb, xb, rb, draw_uniform(keys2[i], tb))
                tb += 1
                if hm_get(k1_, v1_, st1_, m1, vb) >= 0:
                    met = True
                if hm_get(k2_, v2_, st2_, m2, vb) < 0:
                    k2_, v2_, st2_ = hm_set(k2_, v2_, st2_, m2, vb, tb)
                if fr and _dist2(xb, center) < radii2[k]:
                    code = FRONTIER
                    break
            if code != EXITED:
                break
            if met:
                break
            k += 1
        res[i] = k
        codes[i] = code
    return res, codes


@nb.njit(cache=True, nogil=True)
def escape_batch(gv, start, rel0, x0, center, radii, normal, offset, slab, cap, keys):
    """Largest radius index whose sphere is reached before entering H.

    H = {<x, normal> <= offset}.  With ``slab`` the k-th target is the
    plane <x, normal> = offset + radii[k] instead of a sphere.  Returns, per
    trial, the number of radii escaped (0..nr)."""
    T = keys.size
    nr = radii.size
    res = np.zeros(T, np.int64)
    codes = np.zeros(T, np.int64)
    d = x0.size
    for i in range(T):
        rel = rel0.copy()
        x = x0.copy()
        v = start
        k = 0
        code = EXITED
        t = 0
        while True:
            h = 0.0
            for a in range(d):
                h += x[a] * normal[a]
            h -= offset
            if t > 0 and h <= 0.0:
                code = HIT
                break
            if slab:
                while k < nr and h >= radii[k]:
                    k += 1
            else:
                d2 = _dist2(x, center)
                while k < nr and d2 >= radii[k] * radii[k]:
                    k += 1
            if k == nr:
                break
            if t >= cap:
                code = CAPPED
                break
            if t == 0 and _is_frontier(gv, v, rel):
                code = FRONTIER
                break
            v, fr = _step(gv, v, x, rel, draw_uniform(keys[i], t))
            t += 1
            if fr:
                code = FRONTIER
                break
        res[i] = k
        codes[i] = code
    return res, codes


@nb.njit(cache=True, nogil=True)
def exit_time_batch(gv, start, rel0, x0, center, r2, tmax, keys):
    """First time the walk reaches distance >= r (capped at tmax + 1)."""
    T = keys.size
    out = np.empty(T, np.int64)
    codes = np.zeros(T, np.int64)
    for i in range(T):
        rel = rel0.copy()
        x = x0.copy()
        v = start
        t = 0
        codes[i] = EXITED
        if _is_frontier(gv, v, rel):
            codes[i] = FRONTIER
            out[i] = 0
            continue
        while _dist2(x, center) < r2 and t <= tmax:
            v, fr = _step(gv, v, x, rel, draw_uniform(keys[i], t))
            t += 1
            if fr and _dist2(x, center) < r2:
                codes[i] = FRONTIER
                break
        if t > tmax:
            codes[i] = CAPPED
        out[i] = t
    return out, codes


@nb.njit(inline="always")
def _in_sorted(arr, v):
    i = np.searchsorted(arr, v)
    return i < arr.size and arr[i] == v


@nb.njit(cache=True, nogil=True)
def hit_before_exit_batch(gv, start, rel0, x0, target, center, r2, cap, keys):
    """1 if the walk meets ``target`` (sorted vertex ids; time 0 included)
    before reaching distance >= r."""
    T = keys.size
    out = np.zeros(T, np.int64)
    codes = np.zeros(T, np.int64)
    for i in range(T):
        rel = rel0.copy()
        x = x0.copy()
        v = start
        if _in_sorted(target, v):
            out[i] = 1
            codes[i] = HIT
            continue
        codes[i] = CAPPED
        if _is_frontier(gv, v, rel):
            codes[i] = FRONTIER
            continue
        for t in range(cap):
            v, fr = _step(gv, v, x, rel, draw_uniform(keys[i], t))
            if _in_sorted(target, v):
                out[i] = 1
                codes[i] = HIT
                break
            if _dist2(x, center) >= r2:
                codes[i] = EXITED
                break
            if fr:
                codes[i] = FRONTIER
                break
    return out, codes


@nb.njit(cache=True, nogil=True)
def cut_annulus_batch(gv, start, rel0, x0, center, rin, rout, rstop, cap, keys):
    """Cut points of R[0, T(center, rstop)] lying in rin <= |x - center| < rout."""
    T = keys.size
    out = np.zeros(T, np.int64)
    codes = np.zeros(T, np.int64)
    absmask = np.zeros(0, np.bool_)
    centers = np.empty((1, center.size))
    centers[0] = center
    r2 = np.array([rstop * rstop])
    d = x0.size
    for i in range(T):
        p, c = walk_path(gv, start, rel0, x0, absmask, centers, r2, cap, keys[i])
        codes[i] = c
        if c != EXITED:
            continue
        ct = cut_times_array(p)
        P = _vertex_positions(gv, p[ct], d)
        m = 0
        for j in range(ct.size):
            d2 = _dist2(P[j], center)
            if d2 >= rin * rin and d2 < rout * rout:
                m += 1
        out[i] = m
    return out, codes


@nb.njit(cache=True, nogil=True)
def exits_from(gv, starts, rels, xs, r2, cap, keys):
    """For each trial: walk from starts[i] to distance >= r from its own start."""
    T = keys.size
    out = np.empty(T, np.int64)
    codes = np.zeros(T, np.int64)
    absmask = np.zeros(0, np.bool_)
    r2a = np.array([r2])
    for i in range(T):
        centers = np.empty((1, xs.shape[1]))
        centers[0] = xs[i]
        p, c = walk_path(gv, starts[i], rels[i], xs[i], absmask, centers, r2a, cap, keys[i])
        out[i] = p[p.size - 1]
        codes[i] = c
    return out, codes


# -- Wilson's algorithm ---------------------------------------------------

@nb.njit(cache=True, nogil=True)
def wilson(gv, in_tree0, order, key):
    """Parent map of a uniform spanning forest wired at the roots (parent -1)."""
    n = in_tree0.size
    in_tree = in_tree0.copy()
    nxt = np.full(n, -1, np.int64)
    ctr = 0
    rel = np.zeros(1, np.int64)
    x = np.zeros(gv[4].shape[1])
    for u in order:
        v = u
        while not in_tree[v]:
            w, fr = _step(gv, v, x, rel, draw_uniform(key, ctr))
            ctr += 1
            nxt[v] = w
            v = w
        v = u
        while not in_tree[v]:
            in_tree[v] = True
            v = nxt[v]
    for v in range(n):
        if in_tree0[v]:
            nxt[v] = -1
    return nxt
