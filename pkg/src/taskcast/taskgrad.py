"""Task loss at realized load and its gradient back to the forecaster.

The task loss scores the dispatch (optimized against the forecast) at the
actual load: shortage/excess penalties, line-overload penalties in both
directions, the quadratic balance regularizer, and optionally the
generation cost.  Differentiating through the dispatch optimum uses the
implicit function theorem on the KKT conditions at the converged point,
restricted to the strongly active constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net as net_mod
from . import sed as sed_mod
from .data import DatasetStats, TrainingExample, denormalize
from .grid import SystemConfig
from .net import NetworkParams
from .sed import ForecastDistribution, SedProblem
from .solver import SqpResult, SqpSettings, QpError, solve_sed

SENSITIVITY_RESIDUAL_TOL = 1e-10


class SensitivityError(RuntimeError):
    """KKT sensitivity system could not be solved for this sample."""


@dataclass(frozen=True)
class TaskLossValue:
    total: float
    shortage: np.ndarray
    excess: np.ndarray
    flow_over: np.ndarray
    flow_under: np.ndarray
    regularizer: np.ndarray
    generation_cost: np.ndarray


@dataclass(frozen=True)
class SolutionSensitivity:
    """Jacobians of the dispatch optimum w.r.t. the forecast parameters."""

    dp_dmu: np.ndarray       # (T*n_gen, T)
    dp_dsigma2: np.ndarray   # (T*n_gen, T)


def task_loss(
    p_star: np.ndarray,
    y_actual: np.ndarray,
    system: SystemConfig,
    include_cost: bool = True,
) -> TaskLossValue:
    """Realized dispatch cost of schedule ``p_star`` against loads ``y_actual``."""
    p_star = np.asarray(p_star, dtype=float)
    y_actual = np.asarray(y_actual, dtype=float)
    t_hours, n_gen = p_star.shape
    if y_actual.shape != (t_hours,):
        raise ValueError(f"expected {t_hours} hourly loads, got {y_actual.shape}")

    a = np.array([g.a for g in system.generators])
    b = np.array([g.b for g in system.generators])
    c = np.array([g.c for g in system.generators])
    flow_mat = system.flow_matrix()
    gammas = np.array([system.line_gamma(ln) for ln in system.lines])
    limits = np.array([ln.flow_limit for ln in system.lines])

    totals = p_star.sum(axis=1)
    shortage = system.lambda_s * np.maximum(y_actual - totals, 0.0)
    excess = system.lambda_e * np.maximum(totals - y_actual, 0.0)
    regularizer = 0.5 * (totals - y_actual) ** 2
    generation_cost = (p_star**2 @ a) + (p_star @ b) + c.sum()

    if len(system.lines):
        flows = p_star @ flow_mat.T - np.outer(y_actual, gammas)
        flow_over = system.lambda_l * np.maximum(flows - limits, 0.0).sum(axis=1)
        flow_under = system.lambda_l * np.maximum(-flows - limits, 0.0).sum(axis=1)
    else:
        flow_over = np.zeros(t_hours)
        flow_under = np.zeros(t_hours)

    total = float(
        shortage.sum()
        + excess.sum()
        + flow_over.sum()
        + flow_under.sum()
        + regularizer.sum()
        + (generation_cost.sum() if include_cost else 0.0)
    )
    return TaskLossValue(
        total=total,
        shortage=shortage,
        excess=excess,
        flow_over=flow_over,
        flow_under=flow_under,
        regularizer=regularizer,
        generation_cost=generation_cost,
    )


def task_loss_grad_p(
    p_star: np.ndarray,
    y_actual: np.ndarray,
    system: SystemConfig,
    include_cost: bool = True,
) -> np.ndarray:
    """Piecewise gradient w.r.t. every dispatch entry, flattened hour-major.

    At kinks of the hinge terms the zero subgradient is used (strict
    inequalities in the indicators).
    """
    p_star = np.asarray(p_star, dtype=float)
    y_actual = np.asarray(y_actual, dtype=float)
    t_hours, n_gen = p_star.shape
    a = np.array([g.a for g in system.generators])
    b = np.array([g.b for g in system.generators])
    flow_mat = system.flow_matrix()
    gammas = np.array([system.line_gamma(ln) for ln in system.lines])
    limits = np.array([ln.flow_limit for ln in system.lines])

    totals = p_star.sum(axis=1)
    grad = np.zeros_like(p_star)
    grad += (-system.lambda_s * (y_actual > totals)[:, None]).astype(float)
    grad += (system.lambda_e * (totals > y_actual)[:, None]).astype(float)
    grad += (totals - y_actual)[:, None]
    if include_cost:
        grad += 2.0 * a[None, :] * p_star + b[None, :]
    if len(system.lines):
        flows = p_star @ flow_mat.T - np.outer(y_actual, gammas)
        over = (flows > limits).astype(float)
        under = (-flows > limits).astype(float)
        grad += system.lambda_l * (over - under) @ flow_mat
    return grad.reshape(-1)


def solution_sensitivity(result: SqpResult, prob: SedProblem) -> SolutionSensitivity:
    """Implicit differentiation of the dispatch optimum at the converged point.

    Solves, for each hour parameter, the bordered system

        [H   G_A'] [dp    ]   [-d(grad)/d(param)]
        [G_A  0  ] [dduals] = [        0        ]

    with A the strongly active rows; weakly active rows (tiny duals) are
    dropped.  Coordinates frozen by strongly active bounds get exactly zero
    sensitivity in the frozen directions.
    """
    p_star = result.p_star
    hess = sed_mod.hessian(p_star, prob)
    g_active = prob.constraints.g_matrix[result.active_set]
    n = hess.shape[0]
    k = g_active.shape[0]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = hess
    kkt[:n, n:] = g_active.T
    kkt[n:, :n] = g_active

    rhs = np.zeros((n + k, 2 * prob.system.horizon))
    rhs[:n, : prob.system.horizon] = -sed_mod.grad_cross_mu(p_star, prob)
    rhs[:n, prob.system.horizon :] = -sed_mod.grad_cross_sigma2(p_star, prob)
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise SensitivityError(f"singular KKT sensitivity system: {exc}") from exc
    residual = float(np.abs(kkt @ sol - rhs).max())
    if residual > SENSITIVITY_RESIDUAL_TOL * (1.0 + float(np.abs(rhs).max())):
        raise SensitivityError(f"KKT sensitivity residual {residual:.3e} too large")
    return SolutionSensitivity(
        dp_dmu=sol[:n, : prob.system.horizon],
        dp_dsigma2=sol[:n, prob.system.horizon :],
    )


@dataclass(frozen=True)
class SampleDiagnostics:
    task_loss: float
    p_star: np.ndarray
    outer_iterations: int


def forecast_to_distribution(
    y_hat_norm: np.ndarray, sigma2_norm: np.ndarray, stats: DatasetStats
) -> ForecastDistribution:
    """Denormalize network outputs into a physical-unit load distribution."""
    mu = denormalize(y_hat_norm, stats.load)
    sigma2 = np.asarray(sigma2_norm, dtype=float) * stats.load.std**2
    return ForecastDistribution(mu=mu, sigma2=sigma2)


def upstream_for_sample(
    result: SqpResult,
    prob: SedProblem,
    y_actual_mw: np.ndarray,
    stats: DatasetStats,
    include_cost: bool = True,
) -> tuple[np.ndarray, float]:
    """Chain the realized-loss gradient through the optimizer to the
    normalized forecast: returns (dL/dy_hat_norm, loss_total).

    The variance path is intentionally excluded; variances are refreshed
    from residuals between epochs, not differentiated through.
    """
    loss = task_loss(result.p_star, y_actual_mw, prob.system, include_cost)
    dl_dp = task_loss_grad_p(result.p_star, y_actual_mw, prob.system, include_cost)
    sens = solution_sensitivity(result, prob)
    dl_dmu = sens.dp_dmu.T @ dl_dp
    return dl_dmu * stats.load.std, loss.total


def task_gradient_theta(
    example: TrainingExample,
    params: NetworkParams,
    sigma2_norm: np.ndarray,
    system: SystemConfig,
    stats: DatasetStats,
    include_cost: bool = True,
    settings: SqpSettings = SqpSettings(),
    p_init: np.ndarray | None = None,
) -> tuple[dict[str, np.ndarray], SampleDiagnostics]:
    """Gradient of the task loss w.r.t. every network parameter, one sample.

    Single-sample convenience path (eval-mode batch normalization); training
    uses the batched equivalent in :mod:`taskcast.train`.
    """
    y_hat, cache = net_mod.forward(params, example.x, mode="eval")
    dist = forecast_to_distribution(y_hat, sigma2_norm, stats)
    prob = sed_mod.make_problem(system, dist)
    result = solve_sed(prob, p_init=p_init, settings=settings)
    if not result.converged:
        raise QpError("max_iterations", "dispatch solve did not converge")
    y_actual = denormalize(example.y_train, stats.load)
    upstream, loss_total = upstream_for_sample(
        result, prob, y_actual, stats, include_cost
    )
    grads = net_mod.backward(params, cache, upstream)
    return grads, SampleDiagnostics(
        task_loss=loss_total, p_star=result.p_star, outer_iterations=result.outer_iterations
    )
