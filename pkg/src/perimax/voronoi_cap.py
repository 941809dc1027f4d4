"""Voronoi tessellations clipped to a convex domain, with exact derivatives.

The derivative formulas treat every vertex of a clipped cell by where it
comes from: interior vertices are circumcenters of three generators,
boundary crossings are circumcenters of two generators and a reflection
of one of them across the domain edge, and domain corners do not move.
Ridge motion integrates to closed-form area derivatives; vertex velocity
projected on the incident edges gives perimeter derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.spatial

from . import geom2d
from .errors import (
    CollinearPoints,
    DegeneratePolygon,
    DuplicatePoints,
    InvalidTargets,
    NonSmoothConfiguration,
    NotConverged,
)
from .geom2d import Line2, Polygon
from .optim import ConstraintHandle, ObjectiveHandle, augmented_lagrangian_solve, quasi_newton_minimize

DISTINCT_TOL = 1e-9
DEGENERACY_TOL = 1e-9


# ---------------------------------------------------------------------------
# diagram topology


@dataclass
class Ridge:
    """Bisector piece between the cells of two generators.

    vertices holds indices into the diagram vertex array, -1 marking an
    end at infinity; ray_dirs gives a unit direction for each infinite
    end (None for finite ends).
    """

    points: tuple[int, int]
    vertices: tuple[int, int]
    ray_dirs: tuple[np.ndarray | None, np.ndarray | None]


@dataclass
class VoronoiDiagram:
    points: np.ndarray
    vertices: np.ndarray
    ridges: list[Ridge]
    cocircular: bool


def _check_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 2:
        raise ValueError(f"need at least two planar generators, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite generator coordinates")
    scale = geom2d.points_scale(p)
    d2 = np.sum((p[:, None, :] - p[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    if d2.min() <= (DISTINCT_TOL * scale) ** 2:
        i, j = np.unravel_index(int(d2.argmin()), d2.shape)
        raise DuplicatePoints(f"generators {i} and {j} coincide within tolerance")
    return p


def build_voronoi(points) -> VoronoiDiagram:
    """Voronoi diagram of distinct generators, via Delaunay duality.

    Every finite vertex is the circumcenter of a Delaunay triangle; hull
    edges dualize to rays. Four or more cocircular generators collapse
    adjacent circumcenters; those are merged into one vertex, the
    zero-length ridge is dropped, and the diagram is flagged.
    """
    p = _check_points(points)
    n = len(p)
    scale = geom2d.points_scale(p)

    if n == 2:
        return VoronoiDiagram(points=p, vertices=np.zeros((0, 2)), ridges=[_line_ridge(p, 0, 1)], cocircular=False)

    try:
        tri = scipy.spatial.Delaunay(p)
        degenerate = tri.simplices.shape[0] == 0
    except scipy.spatial.QhullError:
        degenerate = True
    if degenerate:
        # all generators collinear: parallel full-line ridges between neighbors
        d = p - p.mean(axis=0)
        u = d[int(np.argmax(np.hypot(d[:, 0], d[:, 1])))]
        u = u / math.hypot(u[0], u[1])
        order = np.argsort(p @ u)
        ridges = [_line_ridge(p, int(a), int(b)) for a, b in zip(order[:-1], order[1:])]
        return VoronoiDiagram(points=p, vertices=np.zeros((0, 2)), ridges=ridges, cocircular=False)

    centers = np.array([geom2d.circumcenter(*p[s]) for s in tri.simplices])

    # merge coincident circumcenters of edge-adjacent triangles
    parent = list(range(len(centers)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edge_tris: dict[tuple[int, int], list[int]] = {}
    for t_id, simplex in enumerate(tri.simplices):
        for k in range(3):
            a, b = int(simplex[k]), int(simplex[(k + 1) % 3])
            edge_tris.setdefault((min(a, b), max(a, b)), []).append(t_id)

    cocircular = False
    for (a, b), tids in edge_tris.items():
        if len(tids) == 2:
            t1, t2 = tids
            if math.hypot(*(centers[t1] - centers[t2])) <= DEGENERACY_TOL * scale:
                cocircular = True
                r1, r2 = find(t1), find(t2)
                if r1 != r2:
                    parent[max(r1, r2)] = min(r1, r2)

    roots = sorted({find(t) for t in range(len(centers))})
    remap = {r: k for k, r in enumerate(roots)}
    vertices = centers[roots]

    ridges = []
    for (a, b), tids in sorted(edge_tris.items()):
        if len(tids) == 2:
            v1, v2 = remap[find(tids[0])], remap[find(tids[1])]
            if v1 == v2:
                continue  # degenerate zero-length ridge between merged vertices
            ridges.append(Ridge(points=(a, b), vertices=(v1, v2), ray_dirs=(None, None)))
        else:
            t_id = tids[0]
            simplex = tri.simplices[t_id]
            other = [int(v) for v in simplex if v not in (a, b)][0]
            d = _outward_normal(p[a], p[b], p[other])
            ridges.append(Ridge(points=(a, b), vertices=(remap[find(t_id)], -1), ray_dirs=(None, d)))
    return VoronoiDiagram(points=p, vertices=vertices, ridges=ridges, cocircular=cocircular)


def _line_ridge(p, a, b) -> Ridge:
    t = geom2d.rot90(p[b] - p[a])
    t = t / math.hypot(t[0], t[1])
    return Ridge(points=(a, b), vertices=(-1, -1), ray_dirs=(t, -t))


def _outward_normal(pa, pb, pk) -> np.ndarray:
    d = geom2d.rot90(pb - pa)
    d = d / math.hypot(d[0], d[1])
    mid = 0.5 * (pa + pb)
    if np.dot(d, pk - mid) > 0:
        d = -d
    return d


# ---------------------------------------------------------------------------
# clipping with edge provenance


@dataclass
class ClippedCell:
    """One Voronoi cell intersected with the domain polygon.

    polygon is None for empty cells. Tags record where each edge of the
    clipped polygon came from: ('B', j) for the bisector with generator
    j, ('O', k) for domain edge k. vertex_tags[k] pairs the incoming and
    outgoing edge tag of vertex k.
    """

    index: int
    polygon: Polygon | None
    edge_tags: list = field(default_factory=list)

    @property
    def area(self) -> float:
        return 0.0 if self.polygon is None else self.polygon.area

    @property
    def perimeter(self) -> float:
        return 0.0 if self.polygon is None else self.polygon.perimeter

    @property
    def vertex_tags(self) -> list:
        m = len(self.edge_tags)
        return [(self.edge_tags[k - 1], self.edge_tags[k]) for k in range(m)]

    def ridge_segments(self) -> list:
        out = []
        if self.polygon is None:
            return out
        v = self.polygon.vertices
        for k, tag in enumerate(self.edge_tags):
            if tag[0] == "B":
                out.append((tag[1], v[k], v[(k + 1) % len(v)]))
        return out

    def boundary_segments(self) -> list:
        out = []
        if self.polygon is None:
            return out
        v = self.polygon.vertices
        for k, tag in enumerate(self.edge_tags):
            if tag[0] == "O":
                out.append((tag[1], v[k], v[(k + 1) % len(v)]))
        return out

    def centroid(self) -> np.ndarray:
        v = self.polygon.vertices
        x, y = v[:, 0], v[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = cross.sum() / 2.0
        cx = ((x + xn) * cross).sum() / (6.0 * a)
        cy = ((y + yn) * cross).sum() / (6.0 * a)
        return np.array([cx, cy])


def _cut_ring(ring, mx, my, ux, uy, tag, svals):
    out = []
    n = len(ring)
    for k in range(n):
        x0, y0, t0 = ring[k]
        s0 = svals[k]
        k1 = k + 1 if k + 1 < n else 0
        x1, y1, _ = ring[k1]
        s1 = svals[k1]
        if s0 <= 0.0:
            out.append((x0, y0, t0))
            if s1 > 0.0:
                w = s0 / (s0 - s1)
                out.append((x0 + w * (x1 - x0), y0 + w * (y1 - y0), tag))
        elif s1 <= 0.0:
            w = s0 / (s0 - s1)
            out.append((x0 + w * (x1 - x0), y0 + w * (y1 - y0), t0))
    return out


def _dedup_ring(ring, tol):
    if not ring:
        return ring
    out = []
    for x, y, t in ring:
        if out:
            px, py, _ = out[-1]
            if math.hypot(x - px, y - py) <= tol:
                out[-1] = (px, py, t)  # zero edge collapses, outgoing tag survives
                continue
        out.append((x, y, t))
    while len(out) > 1:
        x0, y0, _ = out[0]
        xl, yl, _ = out[-1]
        if math.hypot(x0 - xl, y0 - yl) <= tol:
            out.pop()
        else:
            break
    return out


def clip_cells(points, omega: Polygon) -> list[ClippedCell]:
    """Intersect every Voronoi cell with the convex domain polygon.

    Cells are built by successive half-plane cuts of the domain against
    bisectors ordered by generator distance, with an early exit once the
    remaining bisectors cannot reach the current cell. This handles
    unbounded and slab-like cells without any ray bookkeeping.
    """
    p = _check_points(points)
    if not isinstance(omega, Polygon):
        omega = Polygon(omega)
    if not omega.is_convex():
        from .errors import NotConvex

        raise NotConvex("domain polygon must be convex for cell clipping")
    n = len(p)
    scale = max(geom2d.points_scale(p), omega.scale)
    merge_tol = 1e-13 * scale
    base = [(float(v[0]), float(v[1]), ("O", k)) for k, v in enumerate(omega.vertices)]

    d2 = np.sum((p[:, None, :] - p[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1)

    cells = []
    for i in range(n):
        ring = list(base)
        px, py = p[i]
        r2max = max((x - px) ** 2 + (y - py) ** 2 for x, y, _ in ring)
        for j in order[i]:
            dij2 = d2[i, j]
            if dij2 == np.inf or 0.25 * dij2 > r2max:
                break
            qx, qy = p[j]
            dx, dy = qx - px, qy - py
            dlen = math.sqrt(dij2)
            ux, uy = dx / dlen, dy / dlen
            mx, my = 0.5 * (px + qx), 0.5 * (py + qy)
            svals = [(x - mx) * ux + (y - my) * uy for x, y, _ in ring]
            if max(svals) <= 0.0:
                continue
            ring = _cut_ring(ring, mx, my, ux, uy, ("B", int(j)), svals)
            if not ring:
                break
            r2max = max((x - px) ** 2 + (y - py) ** 2 for x, y, _ in ring)
        ring = _dedup_ring(ring, merge_tol)
        if len(ring) < 3:
            cells.append(ClippedCell(index=i, polygon=None))
            continue
        try:
            poly = Polygon([(x, y) for x, y, _ in ring])
        except DegeneratePolygon:
            cells.append(ClippedCell(index=i, polygon=None))
            continue
        cells.append(ClippedCell(index=i, polygon=poly, edge_tags=[t for _, _, t in ring]))
    return cells


# ---------------------------------------------------------------------------
# derivative matrices


def area_gradients(points, omega: Polygon, cells: list[ClippedCell] | None = None) -> np.ndarray:
    """Derivatives of every clipped cell area with respect to every generator.

    Returns G of shape (2n, n): G[2i, c] is the derivative of the area of
    cell c with respect to the x-coordinate of generator i, G[2i+1, c]
    the y-derivative. Only the two generators of a ridge move it, so each
    interior ridge contributes to exactly four rows and two columns; rows
    sum to zero because the cell areas tile the fixed domain.
    """
    p = _check_points(points)
    n = len(p)
    if cells is None:
        cells = clip_cells(p, omega)
    g = np.zeros((2 * n, n))
    for cell in cells:
        i = cell.index
        for j, a, b in cell.ridge_segments():
            if j < i:
                continue  # each ridge handled once, from the lower-index side
            pi, pj = p[i], p[j]
            diff = pj - pi
            d = math.hypot(diff[0], diff[1])
            nu = diff / d
            tu = geom2d.rot90(nu)
            m = 0.5 * (pi + pj)
            sa = float(np.dot(a - m, tu))
            sb = float(np.dot(b - m, tu))
            length = abs(sb - sa)
            if length == 0.0:
                continue
            s_hi, s_lo = (sa, sb) if sa >= sb else (sb, sa)
            zn = nu * (0.5 * length)
            zt = tu * ((s_hi * s_hi - s_lo * s_lo) / (2.0 * d))
            gi = zn + zt
            gj = zn - zt
            g[2 * i : 2 * i + 2, i] += gi
            g[2 * i : 2 * i + 2, j] -= gi
            g[2 * j : 2 * j + 2, i] += gj
            g[2 * j : 2 * j + 2, j] -= gj
    return g


def _vertex_jacobians(p, omega, i, vtx, in_tag, out_tag, scale):
    """Velocity of one clipped-cell vertex as {generator: 2x2 Jacobian}.

    Raises NonSmoothConfiguration at degenerate vertices: four
    equidistant generators, or a boundary crossing at a domain corner.
    """
    kinds = (in_tag[0], out_tag[0])
    if kinds == ("O", "O"):
        return {}
    if kinds == ("B", "B"):
        j1, j2 = in_tag[1], out_tag[1]
        r = math.hypot(vtx[0] - p[i][0], vtx[1] - p[i][1])
        dist = np.hypot(p[:, 0] - vtx[0], p[:, 1] - vtx[1])
        near = np.abs(dist - r) <= DEGENERACY_TOL * scale
        if int(near.sum()) > 3:
            raise NonSmoothConfiguration(
                f"Voronoi vertex of degree {int(near.sum())} at ({vtx[0]:.6g}, {vtx[1]:.6g})"
            )
        try:
            return {
                i: geom2d.circumcenter_jacobian(p[i], p[j1], p[j2], which=0),
                j1: geom2d.circumcenter_jacobian(p[i], p[j1], p[j2], which=1),
                j2: geom2d.circumcenter_jacobian(p[i], p[j1], p[j2], which=2),
            }
        except CollinearPoints as exc:
            raise NonSmoothConfiguration(str(exc)) from exc
    # boundary crossing: one tag is a domain edge, the other a bisector
    k = in_tag[1] if in_tag[0] == "O" else out_tag[1]
    j = in_tag[1] if in_tag[0] == "B" else out_tag[1]
    verts = omega.vertices
    e0 = verts[k]
    e1 = verts[(k + 1) % len(verts)]
    if (
        math.hypot(vtx[0] - e0[0], vtx[1] - e0[1]) <= DEGENERACY_TOL * scale
        or math.hypot(vtx[0] - e1[0], vtx[1] - e1[1]) <= DEGENERACY_TOL * scale
    ):
        raise NonSmoothConfiguration(f"ridge crosses the domain boundary at corner near ({vtx[0]:.6g}, {vtx[1]:.6g})")
    line = Line2.through(e0, e1)
    refl = geom2d.reflect_point(p[j], line)
    try:
        ja = geom2d.circumcenter_jacobian(p[i], p[j], refl, which=0)
        jb = geom2d.circumcenter_jacobian(p[i], p[j], refl, which=1)
        jc = geom2d.circumcenter_jacobian(p[i], p[j], refl, which=2)
    except CollinearPoints as exc:
        # the ridge grazes the boundary edge almost tangentially; the
        # crossing point is not differentiable there
        raise NonSmoothConfiguration(str(exc)) from exc
    rmat = geom2d.reflection_matrix(line)
    return {i: ja, j: jb + jc @ rmat}


def perimeter_gradients(points, omega: Polygon, cells: list[ClippedCell] | None = None) -> np.ndarray:
    """Derivatives of every clipped cell perimeter, shape (2n, n).

    Each vertex of a clipped cell moves with the generators that define
    it; projecting its velocity on the two incident edges gives the
    length derivatives. Domain corners are fixed, so they contribute
    nothing.
    """
    p = _check_points(points)
    n = len(p)
    if cells is None:
        cells = clip_cells(p, omega)
    if not isinstance(omega, Polygon):
        omega = Polygon(omega)
    scale = max(geom2d.points_scale(p), omega.scale)
    g = np.zeros((2 * n, n))
    for cell in cells:
        if cell.polygon is None:
            continue
        i = cell.index
        verts = cell.polygon.vertices
        m = len(verts)
        tags = cell.edge_tags
        for k in range(m):
            vtx = verts[k]
            in_tag = tags[k - 1]
            out_tag = tags[k]
            jacs = _vertex_jacobians(p, omega, i, vtx, in_tag, out_tag, scale)
            if not jacs:
                continue
            for other in (verts[k - 1], verts[(k + 1) % m]):
                edge = vtx - other
                elen = math.hypot(edge[0], edge[1])
                if elen == 0.0:
                    continue
                u = edge / elen
                for gen, jac in jacs.items():
                    g[2 * gen : 2 * gen + 2, i] += jac.T @ u
    return g


# ---------------------------------------------------------------------------
# capacity objective, Lloyd energy, solvers


def _validate_targets(targets, omega_area=None, require_sum=False) -> np.ndarray:
    t = np.asarray(targets, dtype=float)
    if t.ndim != 1 or len(t) < 1:
        raise InvalidTargets("targets must be a one-dimensional sequence")
    if np.any(~np.isfinite(t)) or np.any(t <= 0):
        raise InvalidTargets("targets must be positive and finite")
    if require_sum and omega_area is not None:
        if abs(t.sum() - omega_area) > 1e-8 * omega_area:
            raise InvalidTargets(
                f"targets sum to {t.sum():.12g} but the domain area is {omega_area:.12g}"
            )
    return t


def capacity_objective(points, omega: Polygon, targets) -> tuple[float, np.ndarray]:
    """Sum of squared area deviations and its exact gradient."""
    t = _validate_targets(targets)
    cells = clip_cells(points, omega)
    areas = np.array([c.area for c in cells])
    resid = areas - t
    grad_mat = area_gradients(points, omega, cells)
    return float(resid @ resid), grad_mat @ (2.0 * resid)


def lloyd_energy(points, omega: Polygon) -> tuple[float, np.ndarray]:
    """Quantization energy: integral of |x - p_i|^2 over each clipped cell.

    The gradient with respect to p_i is 2 A_i (p_i - c_i); ridge motion
    terms cancel between neighbours because the integrand is continuous
    across bisectors.
    """
    p = _check_points(points)
    cells = clip_cells(p, omega)
    total = 0.0
    grad = np.zeros(2 * len(p))
    for cell in cells:
        if cell.polygon is None:
            continue
        i = cell.index
        v = cell.polygon.vertices
        u = v - p[i]
        un = np.roll(u, -1, axis=0)
        cross = u[:, 0] * un[:, 1] - u[:, 1] * un[:, 0]
        quad = (u * u).sum(axis=1) + (u * un).sum(axis=1) + (un * un).sum(axis=1)
        total += float((cross * quad).sum() / 12.0)
        grad[2 * i : 2 * i + 2] = 2.0 * cell.area * (p[i] - cell.centroid())
    return total, grad


def lloyd_step(points, omega: Polygon) -> np.ndarray:
    """Move every generator to the centroid of its clipped cell."""
    p = _check_points(points)
    out = p.copy()
    for cell in clip_cells(p, omega):
        if cell.polygon is not None:
            out[cell.index] = cell.centroid()
    return out


@dataclass
class CapacityResult:
    points: np.ndarray
    areas: np.ndarray
    residual: float
    mode: str
    objective_value: float
    iterations: int
    converged: bool


class _CellCache:
    """Memoizes clipping and derivative matrices for repeated evaluations at one x."""

    def __init__(self, omega, maxsize=4):
        self.omega = omega
        self.maxsize = maxsize
        self.store: dict[bytes, dict] = {}

    def at(self, x: np.ndarray) -> dict:
        key = x.tobytes()
        hit = self.store.get(key)
        if hit is not None:
            return hit
        p = x.reshape(-1, 2)
        cells = clip_cells(p, self.omega)
        entry = {
            "points": p,
            "cells": cells,
            "areas": np.array([c.area for c in cells]),
        }
        if len(self.store) >= self.maxsize:
            self.store.pop(next(iter(self.store)))
        self.store[key] = entry
        return entry

    def area_grad(self, x: np.ndarray) -> np.ndarray:
        entry = self.at(x)
        if "agrad" not in entry:
            entry["agrad"] = area_gradients(entry["points"], self.omega, entry["cells"])
        return entry["agrad"]

    def perimeter_grad(self, x: np.ndarray) -> np.ndarray:
        entry = self.at(x)
        if "pgrad" not in entry:
            entry["pgrad"] = perimeter_gradients(entry["points"], self.omega, entry["cells"])
        return entry["pgrad"]


def _gauss_newton_polish(x, cache: _CellCache, targets, tol_r, max_iter=60):
    """Levenberg-style refinement of the area residuals.

    The residual Jacobian is the transpose of the area derivative matrix,
    so each step solves an n x n system; quadratic convergence near a
    zero-residual tessellation finishes what the quasi-Newton phase
    started.
    """
    n = len(targets)
    mu = 1e-12
    for it in range(max_iter):
        entry = cache.at(x)
        r = entry["areas"] - targets
        if np.abs(r).max() <= tol_r:
            return x, True
        jt = cache.area_grad(x)  # (2n, n), columns are cell-area gradients
        a = jt.T @ jt + mu * np.eye(n)
        try:
            lam = np.linalg.solve(a, r)
        except np.linalg.LinAlgError:
            mu *= 100.0
            continue
        step = -jt @ lam
        x_new = x + step
        r_new = cache.at(x_new)["areas"] - targets
        if np.abs(r_new).max() < np.abs(r).max():
            x = x_new
            mu = max(mu * 0.3, 1e-14)
        else:
            mu *= 10.0
            if mu > 1e6:
                break
    entry = cache.at(x)
    return x, bool(np.abs(entry["areas"] - targets).max() <= tol_r)


def solve_capacity_constrained(
    points0,
    omega: Polygon,
    targets,
    mode: str = "areas-only",
    tol: float | None = None,
    max_iter: int = 2000,
    seed: int = 0,
) -> CapacityResult:
    """Drive a tessellation to prescribed cell areas.

    Modes: 'areas-only' minimizes the squared area deviations;
    'min-perimeter' and 'lloyd-constrained' minimize total perimeter or
    quantization energy under the area constraints (inequalities, which
    the fixed total area turns into equalities). Non-smooth Voronoi
    configurations during an evaluation trigger a tiny seeded
    perturbation and a bounded number of retries.
    """
    if not isinstance(omega, Polygon):
        omega = Polygon(omega)
    t = _validate_targets(targets, omega.area, require_sum=True)
    p0 = _check_points(points0)
    if len(p0) != len(t):
        raise InvalidTargets(f"{len(t)} targets for {len(p0)} generators")
    if mode not in ("areas-only", "min-perimeter", "lloyd-constrained"):
        raise ValueError(f"unknown mode {mode!r}")
    tol_r = tol if tol is not None else 1e-6 * omega.area

    rng = np.random.default_rng(seed)
    scale = omega.scale
    x = p0.ravel().copy()
    for attempt in range(5):
        try:
            return _solve_capacity_once(x, omega, t, mode, tol_r, max_iter)
        except (NonSmoothConfiguration, DuplicatePoints):
            if attempt == 4:
                raise
            x = x + 1e-7 * scale * rng.standard_normal(x.shape)
    raise AssertionError("unreachable")


def _solve_capacity_once(x0, omega, targets, mode, tol_r, max_iter) -> CapacityResult:
    cache = _CellCache(omega)
    n = len(targets)

    def areas_obj(x):
        entry = cache.at(x)
        r = entry["areas"] - targets
        return float(r @ r), cache.area_grad(x) @ (2.0 * r)

    if mode == "areas-only":
        handle = ObjectiveHandle(evaluate=areas_obj)

        def stop(x):
            return bool(np.abs(cache.at(x)["areas"] - targets).max() <= tol_r)

        x, rep = quasi_newton_minimize(handle, x0, tol_g=0.0, max_iter=max_iter, extra_stop=stop)
        converged = rep.converged
        if not stop(x):
            x, converged = _gauss_newton_polish(x, cache, targets, tol_r)
        entry = cache.at(x)
        r = entry["areas"] - targets
        return CapacityResult(
            points=entry["points"].copy(),
            areas=entry["areas"].copy(),
            residual=float(np.abs(r).max()),
            mode=mode,
            objective_value=float(r @ r),
            iterations=rep.iterations,
            converged=converged and bool(np.abs(r).max() <= tol_r),
        )

    # constrained modes start from a feasible tessellation: an empty cell has
    # zero objective and constraint gradients, so an infeasible start can
    # deadlock with generators parked outside the domain
    pre = _solve_capacity_once(x0, omega, targets, "areas-only", tol_r, max_iter)
    x0 = pre.points.ravel().copy()

    if mode == "min-perimeter":

        def obj(x):
            # degenerate candidates (coincident generators, non-smooth
            # vertices) come back infinite so the line search backs off
            try:
                entry = cache.at(x)
                per = float(sum(c.perimeter for c in entry["cells"]))
                grad = cache.perimeter_grad(x).sum(axis=1)
            except (DuplicatePoints, NonSmoothConfiguration):
                return math.inf, np.zeros_like(x)
            return per, grad

    else:  # lloyd-constrained

        def obj(x):
            try:
                entry = cache.at(x)
                val, grad = lloyd_energy(entry["points"], omega)
            except (DuplicatePoints, NonSmoothConfiguration):
                return math.inf, np.zeros_like(x)
            return val, grad

    # the warm start itself must be differentiable; a failure here goes to
    # the caller's perturb-and-retry loop rather than into the line search
    if mode == "min-perimeter":
        cache.perimeter_grad(x0)

    def make_con(i):
        def ev(x):
            entry = cache.at(x)
            return float(entry["areas"][i] - targets[i]), cache.area_grad(x)[:, i]

        return ConstraintHandle(evaluate=ev, name=f"area[{i}]")

    constraints = [make_con(i) for i in range(n)]
    # cells tile the domain, so one deficit can absorb every other cell's
    # allowed excess; dividing the tolerance by n-1 keeps max |A_i - t_i|
    # within tol_r at an AL-feasible point
    tol_c = tol_r / max(1, n - 1)
    try:
        x, rep = augmented_lagrangian_solve(
            ObjectiveHandle(evaluate=obj),
            constraints,
            x0,
            tol_c=tol_c,
            max_outer=10,
            inner_iter=max(60, max_iter // 10),
        )
    except NotConverged as exc:
        x = np.asarray(exc.best)
    # restoration: the multiplier method leaves a small area residual that a
    # few Gauss-Newton steps remove with negligible objective change
    x, restored = _gauss_newton_polish(x, cache, targets, tol_r)
    entry = cache.at(x)
    r = entry["areas"] - targets
    val = obj(x)[0]
    return CapacityResult(
        points=entry["points"].copy(),
        areas=entry["areas"].copy(),
        residual=float(np.abs(r).max()),
        mode=mode,
        objective_value=val,
        iterations=0,
        converged=bool(restored and np.abs(r).max() <= tol_r),
    )


# ---------------------------------------------------------------------------
# phase-field initialization from a capacity-constrained tessellation


@dataclass
class InitResult:
    fields: np.ndarray
    points: np.ndarray
    residual: float
    restart_index: int


def sample_points_in_polygon(omega: Polygon, n: int, rng) -> np.ndarray:
    """Uniform rejection sampling in the polygon's bounding box."""
    lo = omega.vertices.min(axis=0)
    hi = omega.vertices.max(axis=0)
    out = np.empty((n, 2))
    got = 0
    while got < n:
        cand = rng.uniform(lo, hi, size=(max(4 * (n - got), 16), 2))
        keep = cand[omega.contains(cand)]
        take = min(len(keep), n - got)
        out[got : got + take] = keep[:take]
        got += take
    return out


def generate_initialization(
    omega: Polygon,
    mesh,
    targets,
    restarts: int = 10,
    seed: int = 0,
    lloyd_iters: int = 5,
    blend: float = 0.02,
) -> InitResult:
    """Phase indicator fields from a capacity-constrained Voronoi tessellation.

    Each restart draws generators uniformly in the domain, relaxes them
    with a few Lloyd steps, then solves the areas-only capacity problem;
    the restart with the smallest residual wins. Mesh nodes are assigned
    to the nearest generator and the resulting indicators are blended
    toward the uniform mixture so no node starts exactly pure (pure
    nodes are invisible to the integral-restoring projection).
    """
    if not isinstance(omega, Polygon):
        omega = Polygon(omega)
    t = _validate_targets(targets, omega.area, require_sum=True)
    n = len(t)
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    if not 0.0 < blend < 1.0 / max(n, 2):
        raise ValueError("blend must lie strictly between 0 and 1/n")

    best = None
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        pts = sample_points_in_polygon(omega, n, rng)
        try:
            for _ in range(lloyd_iters):
                pts = lloyd_step(pts, omega)
            res = solve_capacity_constrained(pts, omega, t, mode="areas-only", seed=seed + r)
        except (DuplicatePoints, NonSmoothConfiguration):
            continue
        if best is None or res.residual < best[0].residual:
            best = (res, r)
        if res.residual == 0.0:
            break
    if best is None:
        raise NotConverged("every capacity restart failed", best=None, residual=math.inf)
    res, r_idx = best

    d2 = np.sum((mesh.nodes[:, None, :] - res.points[None, :, :]) ** 2, axis=-1)
    owner = np.argmin(d2, axis=1)
    fields = np.full((n, mesh.n_nodes), blend)
    fields[owner, np.arange(mesh.n_nodes)] = 1.0 - (n - 1) * blend
    return InitResult(fields=fields, points=res.points, residual=res.residual, restart_index=r_idx)
