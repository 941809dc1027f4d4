"""Shared optimization machinery.

Two entry points: a limited-memory quasi-Newton minimizer with Armijo
backtracking and an optional gradient post-processing hook (used to keep
iterates on linear constraint manifolds), and an augmented-Lagrangian
wrapper that turns inequality constraints into a sequence of smooth
subproblems solved by the same core.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NotConverged

LINESEARCH_HALVINGS = 40
ARMIJO_C1 = 1e-4
CURVATURE_GUARD = 1e-10


@dataclass
class ObjectiveHandle:
    """Differentiable objective: evaluate returns (value, gradient).

    post_process_gradient, when set, maps (gradient, iterate) to the
    search gradient; the minimizer uses the processed gradient for
    directions, stopping and curvature pairs. The usual use is projection
    onto the tangent space of constraints so iterates never leave it.
    """

    evaluate: Callable[[np.ndarray], tuple[float, np.ndarray]]
    post_process_gradient: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None


@dataclass
class ConstraintHandle:
    """Scalar inequality constraint g(x) <= 0 with gradient."""

    evaluate: Callable[[np.ndarray], tuple[float, np.ndarray]]
    name: str = ""


@dataclass
class SolveReport:
    iterations: int
    value: float
    grad_norm: float
    converged: bool
    history: list[float] = field(default_factory=list)
    message: str = ""


@dataclass
class ALReport:
    outer_iterations: int
    value: float
    max_violation: float
    multipliers: np.ndarray
    converged: bool
    inner_reports: list[SolveReport] = field(default_factory=list)


def _two_loop(pg: np.ndarray, s_list: list, y_list: list, rho_list: list) -> np.ndarray:
    q = pg.copy()
    alphas = []
    for s, y, r in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = r * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, r), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = r * np.dot(y, q)
        q += (a - b) * s
    return q


def quasi_newton_minimize(
    objective: ObjectiveHandle,
    x0: np.ndarray,
    tol_g: float | None = None,
    max_iter: int = 500,
    memory: int = 10,
    extra_stop: Callable[[np.ndarray], bool] | None = None,
    callback: Callable[[np.ndarray, float, int], None] | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Limited-memory BFGS descent with Armijo backtracking.

    Accepted objective values are strictly non-increasing. Termination:
    processed-gradient norm <= tol_g (default 1e-6 * sqrt(dim)), the
    optional extra_stop predicate, the iteration budget, or a stalled
    line search after a steepest-descent restart. The report says which.
    """
    x = np.asarray(x0, dtype=float).copy()
    if tol_g is None:
        tol_g = 1e-6 * np.sqrt(x.size)

    def process(g, at):
        if objective.post_process_gradient is None:
            return g
        return objective.post_process_gradient(g, at)

    f, g = objective.evaluate(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    pg = process(np.asarray(g, dtype=float), x)
    history = [f]
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []

    it = 0
    message = "max iterations reached"
    converged = False
    while it < max_iter:
        gnorm = float(np.linalg.norm(pg))
        if gnorm <= tol_g:
            converged, message = True, "gradient tolerance reached"
            break
        if extra_stop is not None and extra_stop(x):
            converged, message = True, "caller stopping test satisfied"
            break
        it += 1

        d = -_two_loop(pg, s_list, y_list, rho_list)
        slope = float(np.dot(d, pg))
        if not np.isfinite(slope) or slope >= -1e-14 * max(1.0, gnorm) * float(np.linalg.norm(d)):
            s_list, y_list, rho_list = [], [], []
            d = -pg
            slope = -gnorm * gnorm
        step = 1.0 if s_list else min(1.0, 1.0 / max(gnorm, 1e-30))

        accepted = False
        for attempt in range(2):
            t = step
            for _ in range(LINESEARCH_HALVINGS):
                x_new = x + t * d
                f_new, g_new = objective.evaluate(x_new)
                if np.isfinite(f_new) and f_new <= f + ARMIJO_C1 * t * slope:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
            if attempt == 0 and s_list:
                # discard curvature memory and retry along steepest descent
                s_list, y_list, rho_list = [], [], []
                d = -pg
                slope = -gnorm * gnorm
                step = min(1.0, 1.0 / max(gnorm, 1e-30))
            else:
                break
        if not accepted:
            message = "line search stalled"
            break

        pg_new = process(np.asarray(g_new, dtype=float), x_new)
        s = x_new - x
        y = pg_new - pg
        sy = float(np.dot(s, y))
        if sy > CURVATURE_GUARD * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > memory:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x, f, pg = x_new, f_new, pg_new
        history.append(f)
        if callback is not None:
            callback(x, f, it)

    report = SolveReport(
        iterations=it,
        value=f,
        grad_norm=float(np.linalg.norm(pg)),
        converged=converged,
        history=history,
        message=message,
    )
    return x, report


def augmented_lagrangian_solve(
    objective: ObjectiveHandle,
    constraints: list[ConstraintHandle],
    x0: np.ndarray,
    tol_c: float = 1e-8,
    tol_g: float | None = None,
    max_outer: int = 15,
    inner_iter: int = 300,
    rho0: float = 10.0,
    memory: int = 10,
) -> tuple[np.ndarray, ALReport]:
    """Minimize objective subject to g_i(x) <= 0 for each constraint.

    Classic multiplier method: minimize
        f(x) + sum_i (max(0, lam_i + rho g_i(x))^2 - lam_i^2) / (2 rho)
    over x, update lam_i <- max(0, lam_i + rho g_i), and grow rho tenfold
    whenever the worst violation fails to halve. Raises NotConverged if
    the violation never reaches tol_c; a feasible return is guaranteed to
    satisfy max_i g_i(x) <= tol_c.
    """
    x = np.asarray(x0, dtype=float).copy()
    m = len(constraints)
    lam = np.zeros(m)
    rho = float(rho0)
    if tol_g is None:
        tol_g = 1e-6 * np.sqrt(x.size)

    def al_eval(xx, lam_frozen, rho_frozen):
        f, g = objective.evaluate(xx)
        if not np.isfinite(f):
            # rejected candidate; skip constraint work, the line search backs off
            return f, np.asarray(g, dtype=float)
        g = np.asarray(g, dtype=float).copy()
        for i, con in enumerate(constraints):
            ci, gci = con.evaluate(xx)
            t = lam_frozen[i] + rho_frozen * ci
            if t > 0.0:
                f += (t * t - lam_frozen[i] ** 2) / (2.0 * rho_frozen)
                g += t * np.asarray(gci, dtype=float)
            else:
                f -= lam_frozen[i] ** 2 / (2.0 * rho_frozen)
        return f, g

    inner_tol = max(tol_g, 1e-3)
    reports = []
    best_x = x.copy()
    best_viol = np.inf
    prev_viol = np.inf
    for outer in range(1, max_outer + 1):
        lam_f, rho_f = lam.copy(), rho
        handle = ObjectiveHandle(
            evaluate=lambda xx, lf=lam_f, rf=rho_f: al_eval(xx, lf, rf),
            post_process_gradient=objective.post_process_gradient,
        )
        x, rep = quasi_newton_minimize(handle, x, tol_g=inner_tol, max_iter=inner_iter, memory=memory)
        reports.append(rep)

        cvals = np.array([con.evaluate(x)[0] for con in constraints])
        viol = float(np.maximum(cvals, 0.0).max()) if m else 0.0
        if viol < best_viol:
            best_viol, best_x = viol, x.copy()
        if viol <= tol_c:
            f_final, _ = objective.evaluate(x)
            return x, ALReport(
                outer_iterations=outer,
                value=f_final,
                max_violation=viol,
                multipliers=lam,
                converged=True,
                inner_reports=reports,
            )
        lam = np.maximum(0.0, lam + rho * cvals)
        np.clip(lam, 0.0, 1e8, out=lam)
        if viol > 0.5 * prev_viol:
            rho = min(rho * 10.0, 1e10)
        prev_viol = viol
        inner_tol = max(tol_g, inner_tol * 0.3)

    raise NotConverged(
        f"constraint violation {best_viol:.3e} above tolerance {tol_c:.3e} after {max_outer} outer rounds",
        best=best_x,
        residual=best_viol,
    )
