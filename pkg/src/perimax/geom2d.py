"""Planar geometry primitives: polygons, half-plane clipping, circumcenters.

Points are plain length-2 float sequences (numpy arrays work everywhere).
Tolerances are relative to the bounding-box diagonal of the inputs so the
routines behave identically under rigid motion and uniform scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CollinearPoints, DegeneratePolygon, NotConvex

# Relative tolerances; lengths scale with the input diagonal, areas with its square.
REL_TOL = 1e-12
MERGE_TOL = 1e-14


def _as_xy(p) -> tuple[float, float]:
    x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite point {p!r}")
    return x, y


def rot90(v):
    """Rotate a 2-vector by +90 degrees: (x, y) -> (-y, x)."""
    return np.array([-v[1], v[0]], dtype=float)


def points_scale(pts) -> float:
    """Bounding-box diagonal of a point collection, floored at 1.0.

    The floor keeps absolute tolerances meaningful for inputs clustered
    near the origin at sub-unit extent.
    """
    a = np.asarray(pts, dtype=float).reshape(-1, 2)
    span = a.max(axis=0) - a.min(axis=0)
    return max(1.0, float(math.hypot(span[0], span[1])))


def _signed_area(verts: np.ndarray) -> float:
    x = verts[:, 0]
    y = verts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


class Polygon:
    """Simple polygon with at least 3 vertices, stored counterclockwise.

    The constructor reverses clockwise input, rejects degenerate (near zero
    area) input, and leaves the full simplicity check to ``validate`` since
    it is quadratic in the vertex count.
    """

    __slots__ = ("vertices", "_area", "_perimeter")

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise DegeneratePolygon(f"need at least 3 planar vertices, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DegeneratePolygon("non-finite vertex coordinates")
        s = points_scale(v)
        a = _signed_area(v)
        if abs(a) <= 1e-14 * s * s:
            raise DegeneratePolygon("polygon area is numerically zero")
        if a < 0.0:
            v = v[::-1].copy()
            a = -a
        self.vertices = v
        self._area = a
        self._perimeter = None

    @property
    def area(self) -> float:
        return self._area

    @property
    def perimeter(self) -> float:
        if self._perimeter is None:
            d = np.roll(self.vertices, -1, axis=0) - self.vertices
            self._perimeter = float(np.hypot(d[:, 0], d[:, 1]).sum())
        return self._perimeter

    @property
    def scale(self) -> float:
        return points_scale(self.vertices)

    def __len__(self) -> int:
        return self.vertices.shape[0]

    def __repr__(self) -> str:
        return f"Polygon({len(self)} vertices, area={self.area:.6g})"

    def contains(self, points) -> np.ndarray:
        """Crossing-number test, vectorized over query points.

        Returns a boolean array; points exactly on an edge may land on
        either side, callers needing boundary awareness must test edges.
        """
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = p.reshape(-1, 2)
        v0 = self.vertices
        v1 = np.roll(v0, -1, axis=0)
        inside = np.zeros(p.shape[0], dtype=bool)
        for (x0, y0), (x1, y1) in zip(v0, v1):
            crosses = (y0 > p[:, 1]) != (y1 > p[:, 1])
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x0 + (p[:, 1] - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (p[:, 0] < xint)
        return inside[0] if single else inside

    def is_convex(self, tol: float | None = None) -> bool:
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if tol is None:
            tol = REL_TOL * self.scale**2
        return bool(np.all(cross >= -tol))

    def validate(self) -> None:
        """Full invariant check: simplicity via pairwise segment tests."""
        v = self.vertices
        m = len(v)
        for i in range(m):
            a0, a1 = v[i], v[(i + 1) % m]
            for j in range(i + 1, m):
                if j == i or (j + 1) % m == i or (i + 1) % m == j:
                    continue  # adjacent edges share an endpoint by design
                b0, b1 = v[j], v[(j + 1) % m]
                if _segments_cross(a0, a1, b0, b1):
                    raise DegeneratePolygon(f"edges {i} and {j} intersect; polygon not simple")


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(a0, a1, b0, b1) -> bool:
    d1 = _orient(a0, a1, b0)
    d2 = _orient(a0, a1, b1)
    d3 = _orient(b0, b1, a0)
    d4 = _orient(b0, b1, a1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    return False


def _vertices_of(p) -> np.ndarray:
    if isinstance(p, Polygon):
        return p.vertices
    v = np.asarray(p, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise DegeneratePolygon(f"need at least 3 planar vertices, got shape {v.shape}")
    return v


def polygon_area(p) -> float:
    """Positive area of a counterclockwise simple polygon.

    Accepts a Polygon (already normalized) or a raw vertex array; raw
    clockwise input raises DegeneratePolygon so orientation bugs upstream
    fail loudly instead of flipping signs.
    """
    if isinstance(p, Polygon):
        return p.area
    v = _vertices_of(p)
    a = _signed_area(v)
    s = points_scale(v)
    if abs(a) <= 1e-14 * s * s:
        raise DegeneratePolygon("polygon area is numerically zero")
    if a < 0.0:
        raise DegeneratePolygon("vertices are clockwise; counterclockwise order required")
    return a


def polygon_perimeter(p) -> float:
    """Sum of edge lengths. Vertex order does not matter for length."""
    if isinstance(p, Polygon):
        return p.perimeter
    v = _vertices_of(p)
    d = np.roll(v, -1, axis=0) - v
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def _dedup_ring(verts: list, tol: float) -> list:
    out = []
    for v in verts:
        if out and math.hypot(v[0] - out[-1][0], v[1] - out[-1][1]) <= tol:
            continue
        out.append(v)
    while len(out) > 1 and math.hypot(out[0][0] - out[-1][0], out[0][1] - out[-1][1]) <= tol:
        out.pop()
    return out


def clip_convex(subject, clip):
    """Sutherland-Hodgman clip of ``subject`` against a convex ``clip`` polygon.

    Returns a Polygon, or None when the intersection is empty or has
    vanishing area. The clip polygon must be convex; the subject may be any
    simple polygon (a non-convex subject with disconnected intersection is
    outside the supported envelope, as usual for this algorithm).
    """
    sub = _vertices_of(subject)
    clp = _vertices_of(clip)
    if _signed_area(clp) < 0:
        clp = clp[::-1]
    s = points_scale(np.vstack([sub, clp]))
    e = np.roll(clp, -1, axis=0) - clp
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    if not np.all(cross >= -REL_TOL * s * s):
        raise NotConvex("clip polygon has a reflex vertex")

    if _signed_area(sub) < 0:
        sub = sub[::-1]
    out = [tuple(v) for v in sub]
    for (ax, ay), (ex, ey) in zip(clp, e):
        if not out:
            return None
        nxt = []
        prev = out[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in out:
            side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if side >= 0.0:
                if prev_side < 0.0:
                    t = prev_side / (prev_side - side)
                    nxt.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                nxt.append(cur)
            elif prev_side >= 0.0:
                t = prev_side / (prev_side - side)
                nxt.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, prev_side = cur, side
        out = nxt
    out = _dedup_ring(out, MERGE_TOL * s)
    if len(out) < 3:
        return None
    try:
        return Polygon(out)
    except DegeneratePolygon:
        return None


def circumcenter(a, b, c) -> np.ndarray:
    """Center of the circle through three non-collinear points.

    Raises CollinearPoints when the doubled signed area is below the
    scale-relative tolerance.
    """
    ax, ay = _as_xy(a)
    bx, by = _as_xy(b)
    cx, cy = _as_xy(c)
    s = points_scale([(ax, ay), (bx, by), (cx, cy)])
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) <= REL_TOL * s * s:
        raise CollinearPoints(f"points {a}, {b}, {c} are numerically collinear")
    al = ax * ax + ay * ay
    be = bx * bx + by * by
    ga = cx * cx + cy * cy
    ox = (al * (by - cy) + be * (cy - ay) + ga * (ay - by)) / d
    oy = (al * (cx - bx) + be * (ax - cx) + ga * (bx - ax)) / d
    return np.array([ox, oy])


def circumcenter_jacobian(a, b, c, which: int) -> np.ndarray:
    """Derivative of the circumcenter with respect to one input point.

    ``which`` selects the point (0 for a, 1 for b, 2 for c). Returns the
    2x2 matrix d(center)/d(point). The circumcenter is invariant under
    cyclic permutation of its arguments, so the derivative with respect to
    b or c is the a-derivative of a rotated argument list.
    """
    pts = [a, b, c]
    if which not in (0, 1, 2):
        raise ValueError("which must be 0, 1 or 2")
    a, b, c = pts[which], pts[(which + 1) % 3], pts[(which + 2) % 3]
    ax, ay = _as_xy(a)
    bx, by = _as_xy(b)
    cx, cy = _as_xy(c)
    s = points_scale([(ax, ay), (bx, by), (cx, cy)])
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) <= REL_TOL * s * s:
        raise CollinearPoints("points are numerically collinear")
    al = ax * ax + ay * ay
    be = bx * bx + by * by
    ga = cx * cx + cy * cy
    nx = al * (by - cy) + be * (cy - ay) + ga * (ay - by)
    ny = al * (cx - bx) + be * (ax - cx) + ga * (bx - ax)

    dnx_dax = 2.0 * ax * (by - cy)
    dnx_day = 2.0 * ay * (by - cy) + ga - be
    dny_dax = 2.0 * ax * (cx - bx) + be - ga
    dny_day = 2.0 * ay * (cx - bx)
    dd_dax = 2.0 * (by - cy)
    dd_day = 2.0 * (cx - bx)

    inv_d2 = 1.0 / (d * d)
    return np.array(
        [
            [(dnx_dax * d - nx * dd_dax) * inv_d2, (dnx_day * d - nx * dd_day) * inv_d2],
            [(dny_dax * d - ny * dd_dax) * inv_d2, (dny_day * d - ny * dd_day) * inv_d2],
        ]
    )


@dataclass(frozen=True)
class Line2:
    """Oriented line given by a point on it and a unit direction."""

    point: tuple[float, float]
    direction: tuple[float, float]

    def __post_init__(self):
        px, py = _as_xy(self.point)
        dx, dy = _as_xy(self.direction)
        n = math.hypot(dx, dy)
        if abs(n - 1.0) > 1e-12:
            raise ValueError(f"direction must have unit norm, got {n!r}")
        object.__setattr__(self, "point", (px, py))
        object.__setattr__(self, "direction", (dx, dy))

    @staticmethod
    def through(a, b) -> "Line2":
        ax, ay = _as_xy(a)
        bx, by = _as_xy(b)
        n = math.hypot(bx - ax, by - ay)
        if n == 0.0:
            raise ValueError("cannot orient a line through coincident points")
        return Line2((ax, ay), ((bx - ax) / n, (by - ay) / n))


def reflection_matrix(line: Line2) -> np.ndarray:
    """Linear part of the reflection across ``line``: 2 d d^T - I."""
    dx, dy = line.direction
    return np.array(
        [
            [2.0 * dx * dx - 1.0, 2.0 * dx * dy],
            [2.0 * dx * dy, 2.0 * dy * dy - 1.0],
        ]
    )


def reflect_point(p, line: Line2) -> np.ndarray:
    """Mirror image of ``p`` across ``line``. Applying it twice is the identity."""
    px, py = _as_xy(p)
    qx, qy = line.point
    r = reflection_matrix(line)
    v = np.array([px - qx, py - qy])
    return np.array([qx, qy]) + r @ v


def regular_polygon(m: int, radius: float = 1.0, center=(0.0, 0.0)) -> Polygon:
    """Counterclockwise regular m-gon, handy as a disk approximation."""
    if m < 3:
        raise DegeneratePolygon("need at least 3 sides")
    t = 2.0 * np.pi * np.arange(m) / m
    cx, cy = _as_xy(center)
    return Polygon(np.column_stack([cx + radius * np.cos(t), cy + radius * np.sin(t)]))
