"""Partitions of the unit sphere into cells of comparable area, and the
assignment of a walk's stopping vertices to cells.

In 2-D the cells are the half-open arcs [k/D, (k+1)/D) of normalized
angle.  In 3-D they are spherical triangles: start from the tetrahedron
(D < 8) or the octahedron (D >= 8) and repeatedly split the largest
triangle through the midpoint of its longest edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def tri_area(a, b, c) -> float:
    """Solid angle of the spherical triangle abc (Van Oosterom-Strackee)."""
    num = abs(np.dot(a, np.cross(b, c)))
    den = 1.0 + np.dot(a, b) + np.dot(b, c) + np.dot(c, a)
    return 2.0 * math.atan2(num, den)


@dataclass
class SpherePartition:
    dim: int
    D: int
    tris: np.ndarray | None = None  # (D, 3, 3) vertices, counter-clockwise from outside

    @property
    def areas(self) -> np.ndarray:
        """Normalized areas (sum 1)."""
        if self.dim == 2:
            return np.full(self.D, 1.0 / self.D)
        return np.array([tri_area(*t) for t in self.tris]) / (4.0 * math.pi)

    @property
    def diameters(self) -> np.ndarray:
        """Geodesic diameter of each cell."""
        if self.dim == 2:
            return np.full(self.D, TWO_PI / self.D)
        out = []
        for t in self.tris:
            out.append(max(math.acos(np.clip(np.dot(t[i], t[j]), -1, 1)) for i in range(3) for j in range(i)))
        return np.array(out)

    @property
    def chord_diameters(self) -> np.ndarray:
        return 2.0 * np.sin(np.minimum(self.diameters, math.pi) / 2.0)

    def cell_of(self, p, last: bool = False) -> int:
        """Cell containing direction p; boundary points go to the first
        (or, with ``last``, the last) cell containing them."""
        p = np.asarray(p, dtype=float)
        if self.dim == 2:
            t = math.atan2(p[1], p[0]) / TWO_PI
            if t < 0:
                t += 1.0
            k = int(math.floor(t * self.D))
            return min(k, self.D - 1)
        p = p / np.linalg.norm(p)
        a, b, c = self.tris[:, 0], self.tris[:, 1], self.tris[:, 2]
        s1 = np.einsum("ij,ij->i", np.cross(a, b), np.broadcast_to(p, a.shape))
        s2 = np.einsum("ij,ij->i", np.cross(b, c), np.broadcast_to(p, a.shape))
        s3 = np.einsum("ij,ij->i", np.cross(c, a), np.broadcast_to(p, a.shape))
        eps = 1e-12
        inside = (s1 >= -eps) & (s2 >= -eps) & (s3 >= -eps)
        idx = np.flatnonzero(inside)
        if idx.size == 0:
            raise ValueError("direction not covered by the partition")
        return int(idx[-1] if last else idx[0])

    def sample_in(self, cell: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform point of one cell (rejection from the uniform sphere)."""
        if self.dim == 2:
            t = (cell + rng.random()) / self.D * TWO_PI
            return np.array([math.cos(t), math.sin(t)])
        while True:
            p = uniform_sphere(3, rng)
            if self.cell_of(p) == cell:
                return p


def uniform_sphere(dim: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        z = rng.standard_normal(dim)
        n = np.linalg.norm(z)
        if n > 1e-12:
            return z / n


def _tetrahedron():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / math.sqrt(3)
    faces = [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)]
    return [_orient(v[list(f)]) for f in faces]


def _octahedron():
    e = np.eye(3)
    tris = []
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                tris.append(_orient(np.array([sx * e[0], sy * e[1], sz * e[2]])))
    return tris


def _orient(t):
    if np.dot(t[0], np.cross(t[1], t[2])) < 0:
        t = t[[0, 2, 1]]
    return t


def sphere_partition(dim: int, D: int) -> SpherePartition:
    """D cells covering the unit sphere of R^dim (dim 2 or 3)."""
    if D < 4:
        raise ValueError("D must be at least 4")
    if dim == 2:
        return SpherePartition(2, D)
    if dim != 3:
        raise ValueError("sphere partitions are implemented for dim 2 and 3")
    tris = _tetrahedron() if D < 8 else _octahedron()
    areas = [tri_area(*t) for t in tris]
    while len(tris) < D:
        k = int(np.argmax(areas))
        t = tris.pop(k)
        areas.pop(k)
        lens = [np.linalg.norm(t[(i + 1) % 3] - t[(i + 2) % 3]) for i in range(3)]
        i = int(np.argmax(lens))  # edge opposite vertex i
        a, b, c = t[i], t[(i + 1) % 3], t[(i + 2) % 3]
        m = _unit(b + c)
        for nt in (np.array([a, b, m]), np.array([a, m, c])):
            nt = _orient(nt)
            tris.insert(k, nt)
            areas.insert(k, tri_area(*nt))
            k += 1
    return SpherePartition(3, D, np.array(tris))


# -- stopping spheres ------------------------------------------------------

def stopping_sphere(g, center, r):
    """(interior ids, stopping ids) for the stop at the first vertex with
    |x - center| >= r reached from inside the open ball."""
    c = np.asarray(center, dtype=float)
    d2 = np.sum((g.pos - c) ** 2, axis=1)
    inside = d2 < r * r
    S = np.flatnonzero(inside)
    src = np.repeat(np.arange(g.n), np.diff(g.indptr))
    arcs = inside[src] & ~inside[g.indices]
    stop = np.unique(g.indices[arcs])
    return S, stop


def assign_cells(g, center, r, part: SpherePartition, stop_ids, mode: str = "plus") -> np.ndarray:
    """Cell index for each stopping vertex.

    Every edge from the open ball to a stopping vertex crosses the sphere
    once; the vertex is assigned to the first cell met by its crossings
    ("plus") or, in "minus" mode, to the last.  Either way it lands in a
    cell whose liberal discretization contains it, and the cells' vertex
    sets partition the stopping sphere."""
    c = np.asarray(center, dtype=float)
    pos = g.pos
    r2 = r * r
    out = np.empty(len(stop_ids), dtype=np.int64)
    for k, x in enumerate(stop_ids):
        px = pos[x]
        cells = []
        for y in g.neighbors(x):
            py = pos[y]
            if np.sum((py - c) ** 2) >= r2:
                continue
            dvec = px - py
            a = dvec @ dvec
            b = 2 * dvec @ (py - c)
            cc = (py - c) @ (py - c) - r2
            t = (-b + math.sqrt(max(b * b - 4 * a * cc, 0.0))) / (2 * a)
            p = py + t * dvec - c
            cells.append(part.cell_of(p, last=(mode == "minus")))
        if not cells:
            raise ValueError(f"vertex {x} has no edge into the ball")
        out[k] = max(cells) if mode == "minus" else min(cells)
    return out
