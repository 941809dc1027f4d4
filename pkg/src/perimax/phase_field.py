"""Phase-field relaxation of the perimeter functional on P1 elements.

The regularized energy per phase is

    F(u) = eps * u'Ku + (1/eps) * v'Mv,   v = u (1 - u),

whose minimizers develop interfaces of width O(eps); the energy of a
straight interface tends to GAMMA times its length, so energies divide
by GAMMA to read as perimeters. Volume and partition constraints are
enforced by closed-form projections: a mass-direction shift for one
phase, and a well-weighted multiplier field for several phases.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import fem
from .errors import InfeasibleAtPureNodes, SingularSystem
from .optim import ObjectiveHandle, quasi_newton_minimize

# energy of the optimal 1D interface profile: 2 * integral_0^1 s(1-s) ds
GAMMA = 1.0 / 3.0

W_FLOOR = 1e-10
PURE_NODE_TOL = 1e-6
FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True)
class MMParams:
    """Regularization parameters; gamma is fixed by the quartic well."""

    epsilon: float
    gamma: float = GAMMA

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class DensityField:
    """Nodal phase density on a mesh."""

    values: np.ndarray
    mesh: fem.TriMesh

    def integral(self, lumped_mass: np.ndarray | None = None) -> float:
        m = fem.lumped_mass_vector(self.mesh) if lumped_mass is None else lumped_mass
        return float(self.values @ m)


@dataclass(frozen=True)
class ConstraintSpec:
    """Volume fractions of the phases; must sum to one."""

    fractions: tuple

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        if any(not 0.0 < x < 1.0 for x in f):
            raise ValueError("every fraction must lie strictly between 0 and 1")
        if abs(sum(f) - 1.0) > 1e-12:
            raise ValueError(f"fractions sum to {sum(f)!r}, expected 1")
        object.__setattr__(self, "fractions", f)


def well(s):
    """Double well s^2 (1-s)^2, minimized exactly at the pure phases."""
    s = np.asarray(s, dtype=float)
    return s * s * (1.0 - s) * (1.0 - s)


def well_weight(s):
    """sqrt(2 W(s)): the multiplier weight, vanishing at pure values."""
    s = np.asarray(s, dtype=float)
    return math.sqrt(2.0) * np.abs(s * (1.0 - s))


def _eps(params) -> float:
    if isinstance(params, MMParams):
        return params.epsilon
    return MMParams(float(params)).epsilon


def energy_single(u, mass, stiffness, params) -> float:
    eps = _eps(params)
    u = np.asarray(u, dtype=float)
    v = u * (1.0 - u)
    return float(eps * (u @ (stiffness @ u)) + (v @ (mass @ v)) / eps)


def grad_single(u, mass, stiffness, params) -> np.ndarray:
    eps = _eps(params)
    u = np.asarray(u, dtype=float)
    v = u * (1.0 - u)
    return 2.0 * eps * (stiffness @ u) + (2.0 / eps) * (mass @ v) * (1.0 - 2.0 * u)


def energy_multi(us, mass, stiffness, params) -> float:
    return float(sum(energy_single(u, mass, stiffness, params) for u in np.atleast_2d(us)))


def grad_multi(us, mass, stiffness, params) -> np.ndarray:
    us = np.atleast_2d(np.asarray(us, dtype=float))
    return np.stack([grad_single(u, mass, stiffness, params) for u in us])


# ---------------------------------------------------------------------------
# constraint projections


def project_single(u, lumped_mass, target: float) -> np.ndarray:
    """Shift along the mass direction until the integral equals target."""
    u = np.asarray(u, dtype=float)
    m = np.asarray(lumped_mass, dtype=float)
    alpha = (target - u @ m) / (m @ m)
    return u + alpha * m


def project_single_gradient(g, lumped_mass) -> np.ndarray:
    """Component of g tangent to the fixed-integral constraint."""
    g = np.asarray(g, dtype=float)
    m = np.asarray(lumped_mass, dtype=float)
    return g - ((g @ m) / (m @ m)) * m


def _multi_transform(values, weights, lumped_mass, nodal_deficit, integral_deficit):
    """Multiplier update delta_i = (lambda(x) + mu_i) w_i(x).

    Solves for the nodal field lambda and scalars mu_i so the update
    restores the nodal sum and the integrals simultaneously. Nodes where
    every weight vanishes cannot be touched; if the nodal deficit there
    is visible, the weights are floored so the multiplier can act, and
    otherwise those nodes are left alone.
    """
    n, _ = values.shape
    w = weights.copy()
    m = lumped_mass
    e = nodal_deficit
    s = w.sum(axis=0)
    dead = s < W_FLOOR
    stuck = dead & (np.abs(e) > PURE_NODE_TOL)
    if np.any(stuck):
        w[:, stuck] = W_FLOOR
        s = w.sum(axis=0)
        dead = s < W_FLOOR
    active = ~dead

    w_int = w @ m
    if np.any(w_int <= 0.0):
        raise SingularSystem("a phase has identically vanishing well weight")

    ma = m[active]
    wa = w[:, active]
    sa = s[active]
    ea = e[active]

    # (I - A) lambda_bar = b with the last unknown pinned to zero; the rows
    # of (I - A) sum to zero because the columns of A each integrate to one
    b_mat = (wa * (ma / sa)) @ wa.T
    a_mat = b_mat / w_int[None, :]
    q = (ea - (integral_deficit / w_int) @ wa) / sa
    b_vec = (wa * ma) @ q
    sys_mat = np.eye(n)[: n - 1, : n - 1] - a_mat[: n - 1, : n - 1]
    if n > 1:
        if np.linalg.cond(sys_mat) > 1e12:
            raise SingularSystem("pinned multiplier system is numerically singular")
        lam_bar = np.append(np.linalg.solve(sys_mat, b_vec[: n - 1]), 0.0)
    else:
        lam_bar = np.zeros(1)
    mu = (integral_deficit - lam_bar) / w_int
    lam = np.zeros_like(e)
    lam[active] = (ea - mu @ wa) / sa
    return values + (lam[None, :] + mu[:, None]) * w


def project_multi(us, lumped_mass, targets, max_rounds: int = 40) -> np.ndarray:
    """Restore the nodal partition of unity and the phase integrals.

    Applies the multiplier update, clamps to [0, 1], and repeats until
    both residuals fall below the feasibility tolerance. A feasible input
    comes back unchanged to machine precision.
    """
    us = np.atleast_2d(np.asarray(us, dtype=float)).copy()
    m = np.asarray(lumped_mass, dtype=float)
    t = np.asarray(targets, dtype=float)
    for _ in range(max_rounds):
        e = 1.0 - us.sum(axis=0)
        f = t - us @ m
        if np.abs(e).max() <= FEASIBILITY_TOL and np.abs(f).max() <= FEASIBILITY_TOL:
            return us
        us = _multi_transform(us, well_weight(us), m, e, f)
        np.clip(us, 0.0, 1.0, out=us)
    e = 1.0 - us.sum(axis=0)
    f = t - us @ m
    if np.abs(e).max() <= FEASIBILITY_TOL and np.abs(f).max() <= FEASIBILITY_TOL:
        return us
    raise InfeasibleAtPureNodes(
        f"projection stalled: nodal residual {np.abs(e).max():.3e}, "
        f"integral residual {np.abs(f).max():.3e}"
    )


def project_multi_gradient(g, us, lumped_mass) -> np.ndarray:
    """Make a search direction constraint-neutral: zero nodal sum, zero integrals."""
    g = np.atleast_2d(np.asarray(g, dtype=float))
    us = np.atleast_2d(np.asarray(us, dtype=float))
    m = np.asarray(lumped_mass, dtype=float)
    return _multi_transform(g, well_weight(us), m, -g.sum(axis=0), -(g @ m))


# ---------------------------------------------------------------------------
# constrained minimization


def minimize_single(
    u0,
    mesh: fem.TriMesh,
    params,
    target: float,
    mass=None,
    stiffness=None,
    tol_g: float | None = None,
    max_iter: int = 2000,
    full_output: bool = False,
):
    """Minimize the single-phase energy at a fixed integral of u.

    Returns (DensityField, energy), plus the solver report when
    full_output is set. The iterate is projected at the start, steered by
    integral-neutral gradients, and truncated to [0, 1] and re-projected
    at the end.
    """
    params = params if isinstance(params, MMParams) else MMParams(float(params))
    mass = fem.assemble_mass(mesh) if mass is None else mass
    stiffness = fem.assemble_stiffness(mesh) if stiffness is None else stiffness
    m = fem.lumped_mass_vector(mesh, mass)
    if tol_g is None:
        tol_g = 1e-6 * math.sqrt(mesh.n_nodes)

    u = project_single(np.asarray(u0, dtype=float), m, target)

    handle = ObjectiveHandle(
        evaluate=lambda x: (energy_single(x, mass, stiffness, params), grad_single(x, mass, stiffness, params)),
        post_process_gradient=lambda g, x: project_single_gradient(g, m),
    )
    u, report = quasi_newton_minimize(handle, u, tol_g=tol_g, max_iter=max_iter)
    u = project_single(np.clip(u, 0.0, 1.0), m, target)
    energy = energy_single(u, mass, stiffness, params)
    field = DensityField(values=u, mesh=mesh)
    if full_output:
        return field, energy, report
    return field, energy


def minimize_multi(
    us0,
    mesh: fem.TriMesh,
    params,
    targets,
    mass=None,
    stiffness=None,
    tol_g: float | None = None,
    max_iter: int = 2000,
    full_output: bool = False,
):
    """Minimize the summed phase energies over a partition of the domain.

    Iterates keep the nodal sum and the integrals exact: the starting
    point is projected and every search direction is constraint-neutral,
    both via the well-weighted multiplier transform.
    """
    params = params if isinstance(params, MMParams) else MMParams(float(params))
    us0 = np.atleast_2d(np.asarray(us0, dtype=float))
    n, n_nodes = us0.shape
    mass = fem.assemble_mass(mesh) if mass is None else mass
    stiffness = fem.assemble_stiffness(mesh) if stiffness is None else stiffness
    m = fem.lumped_mass_vector(mesh, mass)
    t = np.asarray(targets, dtype=float)
    if len(t) != n:
        raise ValueError(f"{len(t)} targets for {n} phases")
    if tol_g is None:
        tol_g = 1e-6 * math.sqrt(n * n_nodes)

    us = project_multi(us0, m, t)

    def ev(x):
        u = x.reshape(n, n_nodes)
        return energy_multi(u, mass, stiffness, params), grad_multi(u, mass, stiffness, params).ravel()

    def post(g, x):
        u = x.reshape(n, n_nodes)
        return project_multi_gradient(g.reshape(n, n_nodes), u, m).ravel()

    handle = ObjectiveHandle(evaluate=ev, post_process_gradient=post)
    x, report = quasi_newton_minimize(handle, us.ravel(), tol_g=tol_g, max_iter=max_iter)
    us = project_multi(np.clip(x.reshape(n, n_nodes), 0.0, 1.0), m, t)
    energy = energy_multi(us, mass, stiffness, params)
    fields = [DensityField(values=u.copy(), mesh=mesh) for u in us]
    if full_output:
        return fields, energy, report
    return fields, energy


# ---------------------------------------------------------------------------
# boundary energy density for shape derivatives


def volume_multipliers(us, mass, stiffness, params, lumped_mass) -> np.ndarray:
    """Least-squares multiplier of each integral constraint at a minimizer.

    At a constrained minimum the raw energy gradient of each phase is a
    multiple of the lumped mass vector; the multiple is the multiplier.
    """
    us = np.atleast_2d(np.asarray(us, dtype=float))
    g = grad_multi(us, mass, stiffness, params)
    m = np.asarray(lumped_mass, dtype=float)
    return (g @ m) / float(m @ m)


def shape_gradient_density(fields, mesh: fem.TriMesh, params, check_stationarity: bool = True,
                           fractions=None, mass=None, stiffness=None) -> np.ndarray:
    """Nodal density whose boundary pairing differentiates the minimal energy.

    Element densities eps |grad u|^2 + mean W(u) / eps are averaged onto
    nodes with element-area weights. When fractions are given, each
    phase also contributes -mu_i (u_i - c_i) with mu_i the multiplier of
    its integral constraint: moving the boundary sweeps volume at local
    slack u_i - c_i when the targets are fixed fractions of the area.
    Without the correction the value is the plain energy density, which
    is the full derivative only where the multipliers vanish.
    """
    params = params if isinstance(params, MMParams) else MMParams(float(params))
    eps = params.epsilon
    if isinstance(fields, DensityField):
        us = np.atleast_2d(fields.values)
    elif isinstance(fields, (list, tuple)) and fields and isinstance(fields[0], DensityField):
        us = np.stack([f.values for f in fields])
    else:
        us = np.atleast_2d(np.asarray(fields, dtype=float))

    grads, areas = fem.triangle_gradients(mesh)
    tri = mesh.triangles
    density = np.zeros(len(tri))
    for u in us:
        g = np.einsum("tiv,ti->tv", grads, u[tri])
        density += eps * (g * g).sum(axis=1)
        density += well(u[tri]).mean(axis=1) / eps

    num = np.zeros(mesh.n_nodes)
    den = np.zeros(mesh.n_nodes)
    wval = areas * density
    for k in range(3):
        np.add.at(num, tri[:, k], wval)
        np.add.at(den, tri[:, k], areas)
    nodal = num / den

    if fractions is not None:
        fr = np.atleast_1d(np.asarray(fractions, dtype=float))
        if len(fr) != us.shape[0]:
            raise ValueError(f"{len(fr)} fractions for {us.shape[0]} phases")
        mass = fem.assemble_mass(mesh) if mass is None else mass
        stiffness = fem.assemble_stiffness(mesh) if stiffness is None else stiffness
        m = fem.lumped_mass_vector(mesh, mass)
        mus = volume_multipliers(us, mass, stiffness, params, m)
        nodal = nodal - np.einsum("i,in->n", mus, us - fr[:, None])

    if check_stationarity:
        mass = fem.assemble_mass(mesh) if mass is None else mass
        stiffness = fem.assemble_stiffness(mesh) if stiffness is None else stiffness
        m = fem.lumped_mass_vector(mesh, mass)
        raw = grad_multi(us, mass, stiffness, params)
        if us.shape[0] == 1:
            pg = project_single_gradient(raw[0], m)
        else:
            pg = project_multi_gradient(raw, us, m)
        tol = 1e-6 * math.sqrt(us.size)
        norm = float(np.linalg.norm(pg))
        if norm > 10.0 * tol:
            warnings.warn(
                f"density evaluated away from a minimizer: projected gradient norm {norm:.3e}",
                RuntimeWarning,
                stacklevel=2,
            )
    return nodal
