"""Fourier boundary shapes, coefficient gradients, and the outer flow."""

import math

import numpy as np
import pytest

from perimax import fem, shape_opt
from perimax.errors import NonPositiveRadius
from perimax.shape_opt import FlowConfig, RadialShape


def test_disk_eval():
    disk = RadialShape(a0=1.0)
    rho, drho = shape_opt.radial_eval(disk, np.linspace(0, 7, 50))
    assert np.all(rho == 1.0)
    assert np.all(drho == 0.0)


def test_cosine_extremum():
    s = RadialShape(a0=1.0, a=(0.0, 0.5), b=(0.0, 0.0))
    rho, drho = shape_opt.radial_eval(s, np.array([0.0]))
    assert rho[0] == pytest.approx(1.5, abs=1e-15)
    assert drho[0] == pytest.approx(0.0, abs=1e-15)


def test_derivative_matches_finite_differences():
    rng = np.random.default_rng(1)
    s = RadialShape(a0=1.2, a=tuple(rng.normal(0, 0.05, 4)), b=tuple(rng.normal(0, 0.05, 4)))
    t = rng.uniform(0, 2 * math.pi, 30)
    h = 1e-6
    _, drho = shape_opt.radial_eval(s, t)
    fd = (shape_opt.radial_eval(s, t + h)[0] - shape_opt.radial_eval(s, t - h)[0]) / (2 * h)
    assert np.abs(drho - fd).max() < 1e-8


def test_area_closed_form():
    assert shape_opt.shape_area(RadialShape(1.0)) == pytest.approx(math.pi, abs=1e-12)
    s = RadialShape(1.0, (0.1,), (0.0,))
    assert shape_opt.shape_area(s) == pytest.approx(math.pi * 1.005, abs=1e-12)
    rng = np.random.default_rng(2)
    a = rng.normal(0, 0.04, 6)
    b = rng.normal(0, 0.04, 6)
    s = RadialShape(1.1, tuple(a), tuple(b))
    expected = math.pi * (1.1**2 + 0.5 * (a @ a + b @ b))
    assert shape_opt.shape_area(s) == pytest.approx(expected, abs=1e-10)


def test_area_agrees_with_mesh():
    s = RadialShape(1.0, (0.08, 0.0, 0.05), (0.0, 0.06, 0.0))
    mesh = fem.mesh_from_radial(lambda t: shape_opt.radial_eval(s, t)[0], 0.05)
    assert mesh.area == pytest.approx(shape_opt.shape_area(s), rel=0.01)


def test_normal_factor():
    assert np.all(shape_opt.boundary_vn(RadialShape(1.0), np.linspace(0, 6, 20)) == 1.0)
    s = RadialShape(1.0, (0.0, 0.0, 0.0), (0.0, 0.0, 0.2))
    # rho(0) = 1, rho'(0) = 3 b_3 = 0.6
    assert shape_opt.boundary_vn(s, np.array([0.0]))[0] == pytest.approx(1.0 / math.sqrt(1.36), abs=1e-12)
    rng = np.random.default_rng(3)
    s = RadialShape(1.0, tuple(rng.normal(0, 0.05, 5)), tuple(rng.normal(0, 0.05, 5)))
    assert shape_opt.boundary_vn(s, rng.uniform(0, 7, 100)).max() <= 1.0


def test_vector_roundtrip_and_validation():
    s = RadialShape(1.3, (0.1, -0.02), (0.03, 0.0))
    v = shape_opt.shape_to_vector(s)
    assert v.tolist() == [1.3, 0.1, -0.02, 0.03, 0.0]
    s2 = shape_opt.shape_from_vector(v)
    assert s2 == s
    with pytest.raises(ValueError):
        shape_opt.shape_from_vector([1.0, 0.1])
    with pytest.raises(ValueError):
        RadialShape(1.0, (0.1,), ())
    with pytest.raises(NonPositiveRadius):
        RadialShape(1.0, (1.2,), (0.0,))


def test_volume_project():
    s = RadialShape(2.0)
    p = shape_opt.volume_project(s, math.pi)
    assert p.a0 == pytest.approx(1.0, abs=1e-14)
    assert shape_opt.shape_area(p) == pytest.approx(math.pi, abs=1e-10)
    again = shape_opt.volume_project(p, math.pi)
    assert again.a0 == pytest.approx(p.a0, abs=1e-14)


def test_fourier_gradient_area_identity():
    # unit density integrates the boundary speed: recovers the analytic
    # area gradient (2 pi a0, pi a_k, pi b_k)
    s = RadialShape(1.05, (0.07, -0.03, 0.0), (0.02, 0.0, 0.04))
    mesh = fem.mesh_from_radial(lambda t: shape_opt.radial_eval(s, t)[0], 0.05)
    g = shape_opt.fourier_gradient(s, mesh, np.ones(mesh.n_nodes))
    expected = np.concatenate([
        [2 * math.pi * s.a0],
        math.pi * np.asarray(s.a),
        math.pi * np.asarray(s.b),
    ])
    scale = 2 * math.pi * s.a0
    assert np.abs(g - expected).max() <= 0.01 * scale
    assert np.all(shape_opt.fourier_gradient(s, mesh, np.zeros(mesh.n_nodes)) == 0.0)


def test_fourier_gradient_orthogonality_on_disk():
    disk = RadialShape(1.0, (0.0, 0.0), (0.0, 0.0))
    mesh = fem.mesh_from_radial(lambda t: np.ones_like(t), 0.05)
    g = np.zeros(mesh.n_nodes)
    g[mesh.boundary_nodes] = np.cos(mesh.boundary_angles)
    grad = shape_opt.fourier_gradient(disk, mesh, g)
    assert grad[1] == pytest.approx(math.pi, rel=0.01)
    others = np.delete(grad, 1)
    assert np.abs(others).max() <= 0.03


def test_fourier_gradient_rejects_bad_length():
    s = RadialShape(1.0)
    mesh = fem.mesh_from_radial(lambda t: np.ones_like(t), 0.2)
    with pytest.raises(ValueError):
        shape_opt.fourier_gradient(s, mesh, np.ones(3))


def test_flow_config_validation():
    FlowConfig()
    with pytest.raises(ValueError):
        FlowConfig(n_phases=2, fractions=(0.5,))
    with pytest.raises(ValueError):
        FlowConfig(n_phases=2, fractions=(0.6, 0.5))
    with pytest.raises(ValueError):
        FlowConfig(fractions=(1.5,))
    with pytest.raises(ValueError):
        FlowConfig(alpha0=-0.1)


def test_flow_single_phase_smoke():
    cfg = FlowConfig(
        n_phases=1, fractions=(0.5,), n_iter=4, n_mod=2, alpha0=0.1,
        epsilon=0.16, seed=0, inner_max_iter=300,
    )
    shape0 = RadialShape(1.0, (0.05, 0.0), (0.0, 0.03))
    shape, trace = gradient_flow_checked(cfg, shape0)
    assert len(trace.records) == 4
    assert trace.aborted is None
    assert shape_opt.shape_area(shape) == pytest.approx(math.pi, abs=1e-10)
    alphas = [r.alpha for r in trace.records]
    assert alphas == [0.1, 0.1, 0.05, 0.05]
    for r in trace.records:
        assert r.cost == pytest.approx(r.energy_over_gamma)
        assert r.energy > 0 and r.n_nodes > 0
        assert len(r.coefficients) == 5


def gradient_flow_checked(cfg, shape0):
    out = shape_opt.gradient_flow(cfg, shape0)
    assert isinstance(out, tuple) and len(out) == 2
    return out


def test_flow_partition_smoke():
    cfg = FlowConfig(
        n_phases=3, fractions=(1 / 3, 1 / 3, 1 / 3), n_iter=2, alpha0=0.05,
        epsilon=0.2, seed=1, restarts=2, inner_max_iter=300,
    )
    shape, trace = shape_opt.gradient_flow(cfg, RadialShape(1.0, (0.0,), (0.0,)))
    assert len(trace.records) == 2
    assert trace.records[0].reinitialized
    assert all(np.isfinite(r.cost) for r in trace.records)
    assert shape_opt.shape_area(shape) == pytest.approx(math.pi, abs=1e-10)


def test_flow_aborts_on_unmeshable_epsilon():
    cfg = FlowConfig(n_iter=3, epsilon=1e-3)
    shape, trace = shape_opt.gradient_flow(cfg, None)
    assert trace.aborted is not None
    assert trace.records == []
    assert shape.a0 == pytest.approx(1.0)