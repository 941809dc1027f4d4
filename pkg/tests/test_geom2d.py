"""Geometry primitives: frozen oracle values and finite-difference checks."""

import math

import numpy as np
import pytest

from perimax import geom2d
from perimax.errors import CollinearPoints, DegeneratePolygon, NotConvex

UNIT_SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


def test_polygon_area_unit_square():
    assert geom2d.polygon_area(UNIT_SQUARE) == pytest.approx(1.0, abs=1e-15)


def test_polygon_area_triangle():
    assert geom2d.polygon_area([(0, 0), (2, 0), (0, 1)]) == pytest.approx(1.0, abs=1e-15)


def test_polygon_area_rejects_clockwise_raw_input():
    with pytest.raises(DegeneratePolygon):
        geom2d.polygon_area(list(reversed(UNIT_SQUARE)))


def test_polygon_area_rejects_degenerate():
    with pytest.raises(DegeneratePolygon):
        geom2d.polygon_area([(0, 0), (1, 1), (2, 2)])


def test_polygon_constructor_normalizes_orientation():
    p = geom2d.Polygon(list(reversed(UNIT_SQUARE)))
    assert p.area == pytest.approx(1.0)
    # re-reversed vertices are counterclockwise again
    assert geom2d.polygon_area(p.vertices) == pytest.approx(1.0)


def test_polygon_perimeter():
    assert geom2d.polygon_perimeter(UNIT_SQUARE) == pytest.approx(4.0, abs=1e-15)
    tri = [(0, 0), (3, 0), (0, 4)]
    assert geom2d.polygon_perimeter(tri) == pytest.approx(12.0, abs=1e-12)


def test_polygon_validate_rejects_self_intersection():
    bow = geom2d.Polygon.__new__(geom2d.Polygon)
    # bowtie: constructor only sees nonzero net area, validate must catch it
    verts = np.array([(0.0, 0.0), (2.0, 0.0), (0.0, 1.5), (2.0, 1.0)])
    bow.vertices = verts
    bow._area = abs(0.5 * np.dot(verts[:, 0], np.roll(verts[:, 1], -1)) - 0.0)
    bow._perimeter = None
    with pytest.raises(DegeneratePolygon):
        bow.validate()


def test_polygon_contains():
    p = geom2d.Polygon(UNIT_SQUARE)
    assert p.contains((0.5, 0.5))
    assert not p.contains((1.5, 0.5))
    got = p.contains([(0.25, 0.25), (-0.1, 0.4), (0.9, 0.99)])
    assert got.tolist() == [True, False, True]


def test_clip_square_against_itself_is_identity():
    out = geom2d.clip_convex(UNIT_SQUARE, UNIT_SQUARE)
    assert out is not None
    assert out.area == pytest.approx(1.0, abs=1e-12)
    assert out.perimeter == pytest.approx(4.0, abs=1e-12)


def test_clip_disjoint_is_empty():
    far = [(10.0, 10.0), (11.0, 10.0), (11.0, 11.0), (10.0, 11.0)]
    assert geom2d.clip_convex(UNIT_SQUARE, far) is None


def test_clip_half_overlap():
    shifted = [(0.5, 0.0), (1.5, 0.0), (1.5, 1.0), (0.5, 1.0)]
    out = geom2d.clip_convex(UNIT_SQUARE, shifted)
    assert out.area == pytest.approx(0.5, abs=1e-12)


def test_clip_area_bounded_by_inputs():
    rng = np.random.default_rng(7)
    for _ in range(25):
        a = geom2d.regular_polygon(6, radius=1.0 + rng.uniform(0, 1), center=rng.uniform(-1, 1, 2))
        b = geom2d.regular_polygon(5, radius=0.5 + rng.uniform(0, 1), center=rng.uniform(-1, 1, 2))
        out = geom2d.clip_convex(a, b)
        if out is None:
            continue
        assert out.area <= min(a.area, b.area) + 1e-12
        # every output vertex lies in both inputs (within tolerance)
        for v in out.vertices:
            assert a.contains(v + 0.0) or _on_boundary(a, v)
            assert b.contains(v + 0.0) or _on_boundary(b, v)


def _on_boundary(poly, v, tol=1e-9):
    verts = poly.vertices
    nxt = np.roll(verts, -1, axis=0)
    for a, b in zip(verts, nxt):
        e = b - a
        L = math.hypot(e[0], e[1])
        t = np.clip(np.dot(v - a, e) / (L * L), 0.0, 1.0)
        if math.hypot(*(a + t * e - v)) <= tol:
            return True
    return False


def test_clip_rejects_reflex_clip_polygon():
    reflex = [(0, 0), (2, 0), (1, 0.2), (2, 2), (0, 2)]
    with pytest.raises(NotConvex):
        geom2d.clip_convex(UNIT_SQUARE, reflex)


def test_circumcenter_equilateral():
    o = geom2d.circumcenter((0.0, 0.0), (2.0, 0.0), (1.0, math.sqrt(3.0)))
    assert o[0] == pytest.approx(1.0, abs=1e-12)
    assert o[1] == pytest.approx(1.0 / math.sqrt(3.0), abs=1e-12)


def test_circumcenter_equidistant_random():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a, b, c = rng.uniform(-5, 5, (3, 2))
        try:
            o = geom2d.circumcenter(a, b, c)
        except CollinearPoints:
            continue
        ra, rb, rc = (math.hypot(*(o - p)) for p in (a, b, c))
        s = geom2d.points_scale([a, b, c])
        assert abs(ra - rb) <= 1e-9 * s
        assert abs(ra - rc) <= 1e-9 * s


def test_circumcenter_collinear_raises():
    with pytest.raises(CollinearPoints):
        geom2d.circumcenter((0.0, 0.0), (1.0, 1.0), (2.0, 2.0))


def test_circumcenter_jacobian_matches_finite_differences():
    rng = np.random.default_rng(23)
    h = 1e-6
    worst = 0.0
    for _ in range(20):
        pts = rng.uniform(-2, 2, (3, 2))
        try:
            geom2d.circumcenter(*pts)
        except CollinearPoints:
            continue
        for which in range(3):
            jac = geom2d.circumcenter_jacobian(*pts, which=which)
            fd = np.zeros((2, 2))
            for k in range(2):
                pp = pts.copy()
                pm = pts.copy()
                pp[which, k] += h
                pm[which, k] -= h
                fd[:, k] = (geom2d.circumcenter(*pp) - geom2d.circumcenter(*pm)) / (2 * h)
            denom = max(1.0, np.abs(fd).max())
            worst = max(worst, np.abs(jac - fd).max() / denom)
    assert worst <= 1e-6


def test_circumcenter_cyclic_invariance():
    pts = [(0.3, -1.2), (2.0, 0.7), (-0.5, 1.4)]
    o1 = geom2d.circumcenter(*pts)
    o2 = geom2d.circumcenter(pts[1], pts[2], pts[0])
    assert np.allclose(o1, o2, atol=1e-12)


def test_reflection_is_involution():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b, p = rng.uniform(-4, 4, (3, 2))
        if math.hypot(*(b - a)) < 1e-6:
            continue
        line = geom2d.Line2.through(a, b)
        q = geom2d.reflect_point(p, line)
        back = geom2d.reflect_point(q, line)
        assert np.allclose(back, p, atol=1e-12)
        # mirror preserves distance to any point on the line
        assert math.hypot(*(q - np.asarray(a))) == pytest.approx(math.hypot(*(p - a)), abs=1e-10)


def test_reflect_across_x_axis():
    line = geom2d.Line2((0.0, 0.0), (1.0, 0.0))
    q = geom2d.reflect_point((0.7, 1.3), line)
    assert np.allclose(q, [0.7, -1.3], atol=1e-15)


def test_line_requires_unit_direction():
    with pytest.raises(ValueError):
        geom2d.Line2((0.0, 0.0), (1.0, 1.0))


def test_regular_polygon_area_converges_to_disk():
    p = geom2d.regular_polygon(256, radius=1.0)
    exact = 0.5 * 256 * math.sin(2 * math.pi / 256)
    assert p.area == pytest.approx(exact, rel=1e-12)
    assert abs(p.area - math.pi) < 4e-4
