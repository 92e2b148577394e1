"""Inequality-constrained convex QP solver and the sequential QP driver.

``solve_qp`` is a dense Mehrotra predictor-corrector primal-dual interior
point method for

    min 0.5 x'Hx + J'x   s.t.  G x <= h

with H symmetric positive (semi)definite.  ``solve_sed`` wraps it in the
outer loop that re-expands the dispatch objective at each iterate, with a
backtracking line search to guarantee monotone descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import sed as sed_mod
from .grid import SystemConfig
from .sed import SedProblem

KKT_TOL = 1e-8
FEAS_TOL = 1e-8
COMP_TOL = 1e-8
QP_MAX_ITER = 100

# Strong-activity thresholds used when extracting the active set.
ACTIVE_RESIDUAL_TOL = 1e-7
ACTIVE_DUAL_TOL = 1e-7


class QpError(RuntimeError):
    """Subproblem failure: infeasibility, iteration cap, or singular KKT system."""

    def __init__(self, status: str, message: str):
        self.status = status
        super().__init__(message)


@dataclass(frozen=True)
class QpSolution:
    p: np.ndarray
    duals: np.ndarray
    active_set: np.ndarray
    iterations: int
    status: str


@dataclass(frozen=True)
class SqpSettings:
    step_tol: float = 1e-6          # |P(k+1) - P(k)|_inf convergence threshold
    max_outer: int = 50
    armijo_c: float = 1e-4
    max_halvings: int = 30
    kkt_tol: float = KKT_TOL
    feas_tol: float = FEAS_TOL
    comp_tol: float = COMP_TOL


@dataclass(frozen=True)
class SqpResult:
    p_star: np.ndarray
    duals: np.ndarray
    active_set: np.ndarray
    outer_iterations: int
    converged: bool
    objective: float
    kkt_residual: float
    step_norms: tuple[float, ...] = ()


def solve_qp(
    H: np.ndarray,
    J: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    warm_start: np.ndarray | None = None,
    kkt_tol: float = KKT_TOL,
    feas_tol: float = FEAS_TOL,
    comp_tol: float = COMP_TOL,
    max_iter: int = QP_MAX_ITER,
) -> QpSolution:
    """Solve the inequality-constrained QP to the requested KKT tolerances."""
    H = np.asarray(H, dtype=float)
    J = np.asarray(J, dtype=float).reshape(-1)
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float).reshape(-1)
    n = J.size
    m = h.size
    if H.shape != (n, n) or G.shape != (m, n):
        raise ValueError("inconsistent QP dimensions")

    x = np.zeros(n) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    slack = h - G @ x
    s = np.maximum(slack, 1.0)
    z = np.ones(m)

    scale = 1.0 + max(np.abs(J).max(initial=0.0), np.abs(h).max(initial=0.0))

    def residuals(x, s, z):
        r_dual = H @ x + J + G.T @ z
        r_prim = G @ x + s - h
        return r_dual, r_prim

    status = "max_iterations"
    iterations = max_iter
    for it in range(max_iter):
        r_dual, r_prim = residuals(x, s, z)
        mu = float(s @ z) / m
        if (
            np.abs(r_dual).max() <= kkt_tol * scale
            and np.abs(r_prim).max() <= feas_tol * scale
            and mu <= comp_tol
        ):
            status = "optimal"
            iterations = it
            break

        w = z / s
        M = H + (G.T * w) @ G
        try:
            chol = scipy.linalg.cho_factor(M, check_finite=False)
        except scipy.linalg.LinAlgError:
            try:
                chol = scipy.linalg.cho_factor(
                    M + 1e-12 * np.eye(n), check_finite=False
                )
            except scipy.linalg.LinAlgError as exc:
                raise QpError("singular", f"singular KKT system at iteration {it}") from exc

        def newton_step(r_comp):
            # Eliminate ds then dz from the Newton system.
            rhs = -r_dual - G.T @ ((z * r_prim - r_comp) / s)
            dx = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
            ds = -r_prim - G @ dx
            dz = (-r_comp - z * ds) / s
            return dx, ds, dz

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        # Predictor (affine scaling) direction.
        dx_a, ds_a, dz_a = newton_step(s * z)
        alpha_p = max_step(s, ds_a)
        alpha_d = max_step(z, dz_a)
        mu_aff = float((s + alpha_p * ds_a) @ (z + alpha_d * dz_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # Corrector with centering.
        dx, ds, dz = newton_step(s * z + ds_a * dz_a - sigma * mu)
        alpha = 0.99 * min(max_step(s, ds), max_step(z, dz))
        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz

    if status != "optimal":
        # Distinguish a stalled-infeasible problem from slow convergence.
        _, r_prim = residuals(x, s, z)
        if np.abs(r_prim).max() > 1e-4 * scale:
            raise QpError("infeasible", "no feasible point found (primal residual stalled)")
        raise QpError("max_iterations", f"QP not converged in {max_iter} iterations")

    x, z = _polish(H, J, G, h, x, s, z, feas_tol, scale)
    resid = G @ x - h
    active = (np.abs(resid) <= ACTIVE_RESIDUAL_TOL * (1.0 + np.abs(h))) & (
        z > ACTIVE_DUAL_TOL
    )
    return QpSolution(p=x, duals=z, active_set=active, iterations=iterations, status=status)


def _polish(H, J, G, h, x, s, z, feas_tol, scale):
    """Refine an interior-point solution by solving the equality-constrained
    problem on the identified active set.  Kept only if it is feasible with
    nonnegative multipliers; otherwise the interior-point iterate stands."""
    active = z > s
    n = x.size
    k = int(active.sum())
    g_act = G[active]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = H
    kkt[:n, n:] = g_act.T
    kkt[n:, :n] = g_act
    rhs = np.concatenate([-J, h[active]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        try:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        except np.linalg.LinAlgError:
            return x, z
    x_new = sol[:n]
    lam = sol[n:]
    if lam.size and lam.min() < -1e-9 * scale:
        return x, z
    slack_new = h - G @ x_new
    if slack_new.min() < -feas_tol * scale:
        return x, z
    stat = H @ x_new + J + g_act.T @ lam
    stat_old = H @ x + J + G.T @ z
    if np.abs(stat).max() > max(np.abs(stat_old).max(), 1e-12 * scale):
        return x, z
    z_new = np.zeros_like(z)
    z_new[active] = np.maximum(lam, 0.0)
    return x_new, z_new


def _ramp_feasible_init(prob: SedProblem) -> np.ndarray:
    """Equal split of the forecast mean, clipped into boxes and ramp bands."""
    sys_ = prob.system
    n_gen = sys_.n_gen
    p_min = np.array([g.p_min for g in sys_.generators])
    p_max = np.array([g.p_max for g in sys_.generators])
    ru = np.array([g.ramp_up for g in sys_.generators])
    rd = np.array([g.ramp_down for g in sys_.generators])
    p = np.zeros((sys_.horizon, n_gen))
    prev = None
    for t in range(sys_.horizon):
        target = np.clip(np.full(n_gen, prob.dist.mu[t] / n_gen), p_min, p_max)
        lo, hi = p_min.copy(), p_max.copy()
        if t == 0:
            init = np.array(
                [np.nan if g.p_initial is None else g.p_initial for g in sys_.generators]
            )
            known = ~np.isnan(init)
            lo[known] = np.maximum(lo[known], (init - rd)[known])
            hi[known] = np.minimum(hi[known], (init + ru)[known])
        else:
            lo = np.maximum(lo, prev - rd)
            hi = np.minimum(hi, prev + ru)
        if np.any(lo > hi):
            raise QpError("infeasible", f"ramp bands empty at hour {t + 1}")
        prev = np.clip(target, lo, hi)
        p[t] = prev
    return p


def check_ramp_feasibility(system: SystemConfig) -> None:
    """Certificate check: interval propagation of reachable output bands.

    The box/ramp polytope is nonempty iff every propagated band is nonempty
    (a feasible trajectory can then be constructed greedily).
    """
    for gen in system.generators:
        lo, hi = gen.p_min, gen.p_max
        if gen.p_initial is not None:
            lo = max(lo, gen.p_initial - gen.ramp_down)
            hi = min(hi, gen.p_initial + gen.ramp_up)
        for t in range(system.horizon):
            if lo > hi:
                raise QpError(
                    "infeasible",
                    f"generator {gen.id}: no output satisfies boxes and ramps at hour {t + 1}",
                )
            lo = max(gen.p_min, lo - gen.ramp_down)
            hi = min(gen.p_max, hi + gen.ramp_up)


def solve_sed(
    prob: SedProblem,
    p_init: np.ndarray | None = None,
    settings: SqpSettings = SqpSettings(),
) -> SqpResult:
    """Sequential QP on the smoothed dispatch objective.

    Each outer iteration expands the objective to second order at the current
    iterate, solves the QP subproblem over the original linear constraints,
    and accepts the step after a backtracking (Armijo) line search.  Stops
    when the accepted step drops below ``step_tol`` in max norm.
    """
    sys_ = prob.system
    check_ramp_feasibility(sys_)
    n_gen = sys_.n_gen
    shape = (sys_.horizon, n_gen)
    if p_init is None:
        p = _ramp_feasible_init(prob)
    else:
        p = np.asarray(p_init, dtype=float).reshape(shape).copy()

    G = prob.constraints.g_matrix
    h = prob.constraints.h_vector
    x = p.reshape(-1)
    f_x = sed_mod.objective(p, prob)
    duals = np.zeros(h.size)
    active = np.zeros(h.size, dtype=bool)
    step_norms: list[float] = []
    converged = False
    outer = 0

    for outer in range(1, settings.max_outer + 1):
        grad = sed_mod.gradient(x.reshape(shape), prob)
        hess = sed_mod.hessian(x.reshape(shape), prob)
        lin = sed_mod.qp_linear_term(x.reshape(shape), grad, hess)
        qp = solve_qp(
            hess,
            lin,
            G,
            h,
            warm_start=x,
            kkt_tol=settings.kkt_tol,
            feas_tol=settings.feas_tol,
            comp_tol=settings.comp_tol,
        )
        duals, active = qp.duals, qp.active_set
        direction = qp.p - x
        step_inf = float(np.abs(direction).max(initial=0.0))
        slope = float(grad @ direction)

        # Backtracking line search; the QP step is a descent direction.
        alpha = 1.0
        accepted = False
        for _ in range(settings.max_halvings + 1):
            cand = x + alpha * direction
            f_cand = sed_mod.objective(cand.reshape(shape), prob)
            if f_cand <= f_x + settings.armijo_c * alpha * slope or slope >= 0.0:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        x = x + alpha * direction
        f_x = f_cand
        step = alpha * step_inf
        step_norms.append(step)
        if step < settings.step_tol:
            converged = True
            break

    grad = sed_mod.gradient(x.reshape(shape), prob)
    kkt_residual = float(np.abs(grad + G.T @ duals).max())
    return SqpResult(
        p_star=x.reshape(shape),
        duals=duals,
        active_set=active,
        outer_iterations=outer,
        converged=converged,
        objective=f_x,
        kkt_residual=kkt_residual,
        step_norms=tuple(step_norms),
    )
