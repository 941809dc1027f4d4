"""Shape optimization over star-shaped domains with Fourier boundaries.

The boundary is the polar graph r = rho(t) of a truncated Fourier
series. The outer loop maximizes the relaxed least-perimeter energy of
the inner problem by moving the coefficients along the boundary shape
gradient, renormalizing the area by a homothety after every step. Steps
are taken unconditionally; the step size is halved on a fixed schedule
instead of line-searched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.spatial import ConvexHull

from . import fem, phase_field, voronoi_cap
from .errors import (
    DuplicatePoints,
    InfeasibleAtPureNodes,
    MeshTooFine,
    NonPositiveRadius,
    NonSmoothConfiguration,
    NotConverged,
    NotConvex,
    SingularSystem,
)
from .geom2d import Polygon
from .phase_field import MMParams

RHO_MIN = 1e-3
_GRID = np.linspace(0.0, 2.0 * math.pi, 4096, endpoint=False)


@dataclass(frozen=True)
class RadialShape:
    """Polar boundary rho(t) = a0 + sum_k a_k cos(kt) + b_k sin(kt)."""

    a0: float
    a: tuple = ()
    b: tuple = ()

    def __post_init__(self):
        a = tuple(float(x) for x in self.a)
        b = tuple(float(x) for x in self.b)
        if len(a) != len(b):
            raise ValueError(f"{len(a)} cosine but {len(b)} sine coefficients")
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        rho, _ = radial_eval(self, _GRID)
        if rho.min() <= RHO_MIN:
            raise NonPositiveRadius(
                f"radius dips to {rho.min():.3e}, below the floor {RHO_MIN}"
            )

    @property
    def n_modes(self) -> int:
        return len(self.a)


def radial_eval(shape: RadialShape, t) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate rho and its derivative in the angle, exactly."""
    t = np.asarray(t, dtype=float)
    rho = np.full_like(t, shape.a0)
    drho = np.zeros_like(t)
    for k, (ak, bk) in enumerate(zip(shape.a, shape.b), start=1):
        c = np.cos(k * t)
        s = np.sin(k * t)
        rho += ak * c + bk * s
        drho += k * (bk * c - ak * s)
    return rho, drho


def shape_to_vector(shape: RadialShape) -> np.ndarray:
    return np.concatenate([[shape.a0], shape.a, shape.b])


def shape_from_vector(v) -> RadialShape:
    v = np.asarray(v, dtype=float)
    if len(v) % 2 != 1:
        raise ValueError("coefficient vector must have odd length 2N+1")
    n = (len(v) - 1) // 2
    return RadialShape(a0=v[0], a=tuple(v[1 : n + 1]), b=tuple(v[n + 1 :]))


def shape_area(shape: RadialShape) -> float:
    """Polar area by the trapezoid rule; exact for band-limited rho."""
    rho, _ = radial_eval(shape, _GRID)
    return float(0.5 * np.mean(rho * rho) * 2.0 * math.pi)


def boundary_vn(shape: RadialShape, t) -> np.ndarray:
    """Radial-motion normal factor rho / sqrt(rho^2 + rho'^2), in (0, 1]."""
    rho, drho = radial_eval(shape, t)
    return rho / np.hypot(rho, drho)


def shape_perimeter(shape: RadialShape) -> float:
    """Boundary length: integral of sqrt(rho^2 + rho'^2) dt."""
    rho, drho = radial_eval(shape, _GRID)
    return float(np.mean(np.hypot(rho, drho)) * 2.0 * math.pi)


def isoperimetric_ratio(shape: RadialShape) -> float:
    """Per^2 / (4 pi Area); exactly 1 for the disk."""
    return shape_perimeter(shape) ** 2 / (4.0 * math.pi * shape_area(shape))


def volume_project(shape: RadialShape, target_area: float) -> RadialShape:
    """Homothety onto the area constraint."""
    if target_area <= 0:
        raise ValueError("target area must be positive")
    scale = math.sqrt(target_area / shape_area(shape))
    return RadialShape(
        a0=scale * shape.a0,
        a=tuple(scale * x for x in shape.a),
        b=tuple(scale * x for x in shape.b),
    )


def fourier_gradient(shape: RadialShape, mesh: fem.TriMesh, g: np.ndarray) -> np.ndarray:
    """Boundary density against the coefficient velocities.

    Component j is the integral over the boundary of g times the normal
    speed of the boundary under a unit change of coefficient j, ordered
    (a0, a_1..a_N, b_1..b_N). Radial motion delta rho(t) has normal
    speed delta rho * v_n, so the a0 entry with g = 1 is the derivative
    of the area in a0.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (mesh.n_nodes,):
        raise ValueError(f"nodal vector of length {mesh.n_nodes} expected, got {g.shape}")
    bn = mesh.boundary_nodes
    tb = mesh.boundary_angles
    vn = boundary_vn(shape, tb)
    n = shape.n_modes
    out = np.empty(2 * n + 1)
    vel = np.zeros(mesh.n_nodes)

    def entry(basis_vals):
        vel[:] = 0.0
        vel[bn] = basis_vals * vn
        return fem.boundary_integral(mesh, g, vel)

    out[0] = entry(np.ones_like(tb))
    for k in range(1, n + 1):
        out[k] = entry(np.cos(k * tb))
        out[n + k] = entry(np.sin(k * tb))
    return out


# ---------------------------------------------------------------------------
# outer gradient flow


@dataclass(frozen=True)
class FlowConfig:
    """Outer-loop settings; fractions are phase volume fractions.

    A single phase takes one fraction in (0, 1); a partition takes one
    fraction per phase, summing to one.
    """

    n_phases: int = 1
    fractions: tuple = (0.5,)
    n_iter: int = 150
    alpha0: float = 0.5
    n_mod: int = 30
    epsilon: float = 0.05
    target_area: float = math.pi
    seed: int = 0
    restarts: int = 5
    inner_max_iter: int = 1000
    # steps live in the tangent space of the area constraint (the homothety
    # undoes normal motion anyway) and are capped in length for stability
    # far from a maximizer; the cap leaves the flow untouched near one
    tangent_step: bool = True
    step_cap: float = 0.2
    # the boundary density is spiky at interface contact points, so the raw
    # gradient pumps energy into high Fourier modes; mode k is damped by
    # 1/(1 + smoothing k^2), which keeps the stationary shapes unchanged
    smoothing: float = 1.0

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        object.__setattr__(self, "fractions", f)
        if self.n_phases < 1:
            raise ValueError("need at least one phase")
        if len(f) != self.n_phases:
            raise ValueError(f"{len(f)} fractions for {self.n_phases} phases")
        if any(not 0.0 < x < 1.0 for x in f):
            raise ValueError("fractions must lie strictly between 0 and 1")
        if self.n_phases > 1 and abs(sum(f) - 1.0) > 1e-12:
            raise ValueError(f"fractions sum to {sum(f)!r}, expected 1")
        for name in ("n_iter", "alpha0", "n_mod", "epsilon", "target_area", "restarts",
                     "inner_max_iter", "step_cap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.smoothing < 0:
            raise ValueError("smoothing must be nonnegative")


@dataclass
class FlowRecord:
    iteration: int
    coefficients: np.ndarray
    cost: float
    energy: float
    energy_over_gamma: float
    alpha: float
    n_nodes: int
    inner_iterations: int
    inner_converged: bool
    reinitialized: bool


@dataclass
class FlowTrace:
    records: list = field(default_factory=list)
    aborted: str | None = None

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    def rows(self):
        """CSV-ready rows (iteration, cost, energy, energy/gamma, alpha, inner_iters, converged)."""
        for r in self.records:
            yield (r.iteration, r.cost, r.energy, r.energy_over_gamma, r.alpha,
                   r.inner_iterations, int(r.inner_converged))


def _fresh_init(mesh: fem.TriMesh, config: FlowConfig, targets, rng, iteration: int) -> np.ndarray:
    if config.n_phases == 1:
        theta = rng.uniform(0.0, 2.0 * math.pi) if iteration > 0 else 0.0
        s = mesh.nodes @ np.array([math.cos(theta), math.sin(theta)])
        span = s.max() - s.min()
        return ((s - s.min()) / span)[None, :]
    # cell clipping needs a convex domain; the hull of the boundary cycle
    # covers every mesh node, so the tessellation fields stay defined
    pts = mesh.nodes[mesh.boundary_nodes]
    omega = Polygon(pts[ConvexHull(pts).vertices])
    try:
        init = voronoi_cap.generate_initialization(
            omega,
            mesh,
            np.asarray(config.fractions) * omega.area,
            restarts=config.restarts,
            seed=config.seed + 7919 * iteration,
        )
        return init.fields
    except (NotConverged, NonSmoothConfiguration, DuplicatePoints, NotConvex):
        return rng.uniform(0.0, 1.0, (config.n_phases, mesh.n_nodes))


def _inner_solve(us0, mesh, params, targets, config, mass, stiffness):
    if config.n_phases == 1:
        fld, energy, report = phase_field.minimize_single(
            us0[0], mesh, params, targets[0], mass=mass, stiffness=stiffness,
            max_iter=config.inner_max_iter, full_output=True,
        )
        return fld.values[None, :], energy, report
    flds, energy, report = phase_field.minimize_multi(
        us0, mesh, params, targets, mass=mass, stiffness=stiffness,
        max_iter=config.inner_max_iter, full_output=True,
    )
    return np.stack([f.values for f in flds]), energy, report


def area_gradient(shape: RadialShape) -> np.ndarray:
    """Analytic derivative of shape_area in each coefficient."""
    return np.concatenate([
        [2.0 * math.pi * shape.a0],
        math.pi * np.asarray(shape.a),
        math.pi * np.asarray(shape.b),
    ])


def _step_direction(shape: RadialShape, grad: np.ndarray, config: FlowConfig) -> np.ndarray:
    d = np.asarray(grad, dtype=float).copy()
    if config.smoothing > 0.0:
        n = shape.n_modes
        k = np.arange(1, n + 1, dtype=float)
        w = 1.0 / (1.0 + config.smoothing * k * k)
        d[1 : n + 1] *= w
        d[n + 1 :] *= w
    if config.tangent_step:
        ag = area_gradient(shape)
        d = d - ((d @ ag) / (ag @ ag)) * ag
    return d


def _step_shape(shape: RadialShape, delta: np.ndarray, target_area: float) -> RadialShape:
    # unconditional ascent, but an update that sinks the radius below its
    # floor is retried with a shorter step rather than aborting the flow
    vec = shape_to_vector(shape)
    step = 1.0
    for _ in range(20):
        try:
            return volume_project(shape_from_vector(vec + step * delta), target_area)
        except NonPositiveRadius:
            step *= 0.5
    return shape


def _mesh_shape(shape: RadialShape, epsilon: float) -> fem.TriMesh:
    return fem.mesh_from_radial(lambda t: radial_eval(shape, t)[0], epsilon / 2.0)


def _pullback(mesh: fem.TriMesh, shape: RadialShape) -> np.ndarray:
    """Mesh nodes in normalized polar coordinates (unit-disk pullback)."""
    x = mesh.nodes[:, 0]
    y = mesh.nodes[:, 1]
    t = np.arctan2(y, x)
    rho, _ = radial_eval(shape, t)
    s = np.clip(np.hypot(x, y) / rho, 0.0, 1.0)
    return np.column_stack([s * np.cos(t), s * np.sin(t)])


def _transfer_fields(us, shape_old, mesh_old, shape_new, mesh_new) -> np.ndarray:
    """Carry nodal fields between meshes through the common disk pullback."""
    pts_old = _pullback(mesh_old, shape_old)
    pts_new = _pullback(mesh_new, shape_new)
    vals = LinearNDInterpolator(pts_old, us.T)(pts_new)
    hole = np.isnan(vals[:, 0])
    if hole.any():
        # query points slightly outside the convex hull of the source cloud
        vals[hole] = NearestNDInterpolator(pts_old, us.T)(pts_new[hole])
    return np.clip(vals.T, 0.0, 1.0)


def _advance(shape: RadialShape, grad: np.ndarray, alpha: float, config: FlowConfig):
    """Step the coefficients, shortening the increment until the new shape meshes."""
    delta = alpha * _step_direction(shape, grad, config)
    norm = float(np.linalg.norm(delta))
    if norm > config.step_cap:
        delta *= config.step_cap / norm
    for _ in range(12):
        cand = _step_shape(shape, delta, config.target_area)
        try:
            return cand, _mesh_shape(cand, config.epsilon)
        except NonPositiveRadius:
            delta = 0.5 * delta
    raise NonPositiveRadius("every shortened ascent step produced an unmeshable shape")


def gradient_flow(config: FlowConfig, shape0: RadialShape | None = None,
                  callback=None) -> tuple[RadialShape, FlowTrace]:
    """Maximize the inner least-perimeter energy over the boundary shape.

    Per iteration: mesh the current shape at h = epsilon/2, solve the
    inner constrained minimization from the previous fields (carried
    across mesh changes by interpolation) and from a fresh start,
    keeping the lower energy of the two, then push the coefficients
    along the shape gradient and renormalize the area.
    The step is halved every n_mod iterations. A mesh over the node
    budget aborts the flow and returns the partial trace.
    """
    shape = shape0 if shape0 is not None else RadialShape(a0=math.sqrt(config.target_area / math.pi))
    shape = volume_project(shape, config.target_area)
    params = MMParams(config.epsilon)
    rng = np.random.default_rng(config.seed)
    trace = FlowTrace()
    alpha = config.alpha0
    us_prev: np.ndarray | None = None
    mesh_prev: fem.TriMesh | None = None
    shape_prev: RadialShape | None = None

    try:
        mesh = _mesh_shape(shape, config.epsilon)
    except (MeshTooFine, NonPositiveRadius) as exc:
        trace.aborted = str(exc)
        return shape, trace

    for it in range(config.n_iter):
        if it > 0 and it % config.n_mod == 0:
            alpha *= 0.5
        mass = fem.assemble_mass(mesh)
        stiffness = fem.assemble_stiffness(mesh)
        m = fem.lumped_mass_vector(mesh, mass)
        targets = np.asarray(config.fractions) * m.sum()

        # a warm start tracks one local minimum across shapes; a fresh start
        # every iteration keeps the reported value near the global minimum,
        # and the better of the two wins
        candidates = []
        if us_prev is not None:
            if us_prev.shape[1] == mesh.n_nodes:
                # quantized radial meshes: same node count means same layout
                candidates.append((False, us_prev))
            else:
                candidates.append((False, _transfer_fields(
                    us_prev, shape_prev, mesh_prev, shape, mesh)))
        candidates.append((True, _fresh_init(mesh, config, targets, rng, it)))

        best = None
        for reinit, us0 in candidates:
            try:
                us, energy, report = _inner_solve(us0, mesh, params, targets, config, mass, stiffness)
            except (SingularSystem, InfeasibleAtPureNodes, NotConverged):
                continue
            if best is None or energy < best[1]:
                best = (us, energy, report, reinit)
        if best is None:
            trace.aborted = f"inner solve failed on every candidate at iteration {it}"
            break
        us, energy, report, reinitialized = best
        us_prev = us
        mesh_prev = mesh
        shape_prev = shape

        density = phase_field.shape_gradient_density(
            us, mesh, params, check_stationarity=False,
            fractions=config.fractions, mass=mass, stiffness=stiffness,
        )
        grad = fourier_gradient(shape, mesh, density)
        record = FlowRecord(
            iteration=it,
            coefficients=shape_to_vector(shape),
            cost=energy / params.gamma,
            energy=energy,
            energy_over_gamma=energy / params.gamma,
            alpha=alpha,
            n_nodes=mesh.n_nodes,
            inner_iterations=report.iterations,
            inner_converged=report.converged,
            reinitialized=reinitialized,
        )
        trace.records.append(record)
        if callback is not None:
            callback(record, shape)
        try:
            shape, mesh = _advance(shape, grad, alpha, config)
        except MeshTooFine as exc:
            trace.aborted = str(exc)
            break
        except NonPositiveRadius as exc:
            trace.aborted = str(exc)
            break

    return shape, trace
