"""Closed-form expectations of dispatch penalties under Gaussian load.

With hourly load ``y ~ N(mu, sigma2)`` every penalty term of the dispatch
objective reduces to combinations of the Gaussian partial expectations

    E[(s - y)+] = sigma2 * pdf(s) + (s - mu) * cdf(s)
    E[(y - s)+] = E[(s - y)+] - (s - mu)

where ``pdf``/``cdf`` are the density and distribution function of
``N(mu, sigma2)`` evaluated at the threshold ``s``.  All derivatives
returned here are with respect to the threshold argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .grid import SystemConfig

# Variances below this floor (normalized units) are clamped so densities stay
# finite and the dispatch Hessian stays well conditioned.
SIGMA2_FLOOR = 1e-6

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DegenerateLineError(ValueError):
    """A line whose flow does not respond to total load (gamma == 0)."""


@dataclass(frozen=True)
class GaussianHour:
    """Forecast distribution of one hour's load: mean (MW), variance (MW^2)."""

    mu: float
    sigma2: float

    def __post_init__(self):
        object.__setattr__(self, "sigma2", max(float(self.sigma2), SIGMA2_FLOOR))
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


@dataclass(frozen=True)
class PenaltyEval:
    """A penalty expectation with first and second threshold derivatives."""

    value: float
    d_s: float
    d2_s: float


@dataclass(frozen=True)
class LineFlowPenalty:
    """Per-line decomposition of the expected flow penalty.

    ``plus`` covers overload in the flow direction (threshold ``s_plus``),
    ``minus`` the reverse direction (threshold ``s_minus``).  Derivatives in
    both evaluations already carry the ``lambda_l * |gamma|`` scaling, so a
    chain factor ``shift/gamma`` is all a caller needs per generator.
    """

    line_id: str
    gamma: float
    s_plus: float
    s_minus: float
    plus: PenaltyEval
    minus: PenaltyEval


def std_normal(x):
    """Standard normal density and distribution function at ``x``.

    The CDF is evaluated through the complementary error function and is
    accurate to better than 1e-15 absolute over the full real line.
    """
    x = np.asarray(x, dtype=float)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    cdf = ndtr(x)
    if x.ndim == 0:
        return float(pdf), float(cdf)
    return pdf, cdf


def norm_pdf(s: float, hour: GaussianHour) -> float:
    """Density of N(mu, sigma2) at s."""
    z = (s - hour.mu) / hour.sigma
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z) / hour.sigma


def norm_cdf(s: float, hour: GaussianHour) -> float:
    """Distribution function of N(mu, sigma2) at s."""
    return float(ndtr((s - hour.mu) / hour.sigma))


def expected_below(s: float, hour: GaussianHour) -> float:
    """E[(s - y)+] for y ~ N(mu, sigma2)."""
    return hour.sigma2 * norm_pdf(s, hour) + (s - hour.mu) * norm_cdf(s, hour)


def expected_above(s: float, hour: GaussianHour) -> float:
    """E[(y - s)+] for y ~ N(mu, sigma2)."""
    return expected_below(s, hour) - (s - hour.mu)


def expected_balance_penalty(
    s: float, hour: GaussianHour, lambda_s: float, lambda_e: float
) -> PenaltyEval:
    """Expected shortage/excess penalty of scheduling total generation ``s``.

    value = E[lambda_s * (y - s)+ + lambda_e * (s - y)+]
          = (lambda_s + lambda_e) * (sigma2*pdf(s) + (s-mu)*cdf(s)) - lambda_s*(s-mu)

    d_s  = (lambda_s + lambda_e) * cdf(s) - lambda_s
    d2_s = (lambda_s + lambda_e) * pdf(s)
    """
    lam = lambda_s + lambda_e
    pdf = norm_pdf(s, hour)
    cdf = norm_cdf(s, hour)
    dev = s - hour.mu
    value = lam * (hour.sigma2 * pdf + dev * cdf) - lambda_s * dev
    return PenaltyEval(value=value, d_s=lam * cdf - lambda_s, d2_s=lam * pdf)


def _one_sided(s: float, hour: GaussianHour, scale: float, above: bool) -> PenaltyEval:
    """scale * E[(y - s)+] (above) or scale * E[(s - y)+] (below), with
    derivatives in the threshold s."""
    pdf = norm_pdf(s, hour)
    cdf = norm_cdf(s, hour)
    below = hour.sigma2 * pdf + (s - hour.mu) * cdf
    if above:
        return PenaltyEval(
            value=scale * (below - (s - hour.mu)),
            d_s=scale * (cdf - 1.0),
            d2_s=scale * pdf,
        )
    return PenaltyEval(value=scale * below, d_s=scale * cdf, d2_s=scale * pdf)


def expected_flow_penalty(
    p_hour: np.ndarray, hour: GaussianHour, system: SystemConfig
) -> tuple[float, list[LineFlowPenalty]]:
    """Expected line-overload penalty of one hour's dispatch.

    For each line the flow is ``flow = g_part - gamma * y`` with
    ``g_part = sum_m shift[m] * generation[m]`` and
    ``gamma = sum_m shift[m] * load_factor[m]``.  Crossing thresholds in load
    space are ``s_plus = (g_part - limit) / gamma`` and
    ``s_minus = (g_part + limit) / gamma``; each direction's expected
    violation is a one-sided Gaussian partial expectation scaled by
    ``lambda_l * |gamma|``.
    """
    p_hour = np.asarray(p_hour, dtype=float)
    flow_mat = system.flow_matrix()
    g_parts = flow_mat @ p_hour
    lam = system.lambda_l

    total = 0.0
    per_line: list[LineFlowPenalty] = []
    for idx, line in enumerate(system.lines):
        gamma = system.line_gamma(line)
        if gamma == 0.0:
            raise DegenerateLineError(
                f"line {line.id}: flow insensitive to load (gamma = 0)"
            )
        s_plus = (g_parts[idx] - line.flow_limit) / gamma
        s_minus = (g_parts[idx] + line.flow_limit) / gamma
        scale = lam * abs(gamma)
        if gamma > 0:
            # flow > limit  <=>  y < s_plus;  flow < -limit  <=>  y > s_minus
            plus = _one_sided(s_plus, hour, scale, above=False)
            minus = _one_sided(s_minus, hour, scale, above=True)
        else:
            plus = _one_sided(s_plus, hour, scale, above=True)
            minus = _one_sided(s_minus, hour, scale, above=False)
        total += plus.value + minus.value
        per_line.append(
            LineFlowPenalty(
                line_id=line.id,
                gamma=gamma,
                s_plus=s_plus,
                s_minus=s_minus,
                plus=plus,
                minus=minus,
            )
        )
    return total, per_line


def expected_quadratic_terms(p_hour: np.ndarray, hour: GaussianHour, gens) -> float:
    """Expected balance regularizer plus deterministic generation cost.

    value = 0.5 * ((sum(P) - mu)^2 + sigma2) + sum_g a*P^2 + b*P + c
    """
    p_hour = np.asarray(p_hour, dtype=float)
    total = float(p_hour.sum())
    cost = 0.0
    for g, gen in enumerate(gens):
        cost += gen.a * p_hour[g] ** 2 + gen.b * p_hour[g] + gen.c
    return 0.5 * ((total - hour.mu) ** 2 + hour.sigma2) + cost
