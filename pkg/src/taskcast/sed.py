"""Smoothed stochastic dispatch objective: value, gradient, Hessian.

The objective separates over hours; for hour t with total generation
``s_t = sum_g P[t, g]``:

    f_t = balance_penalty(s_t) + flow_penalty(P[t]) + 0.5*((s_t - mu_t)^2
          + sigma2_t) + generation_cost(P[t])

Chain factors: ``ds_t/dP[t,g] = 1`` and, per line,
``ds_plus/dP[t,g] = ds_minus/dP[t,g] = shift_row[g] / gamma``.
The Hessian is block-diagonal by hour.  All hour terms are evaluated as
vectorized array expressions; the scalar closed forms in
:mod:`taskcast.gaussmath` define the same arithmetic and anchor the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .gaussmath import SIGMA2_FLOOR, GaussianHour
from .grid import ConstraintSet, SystemConfig, build_constraints

# Minimum eigenvalue targeted when nudging an hour block positive definite.
MIN_BLOCK_EIG = 1e-8

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ForecastDistribution:
    """Per-hour Gaussian forecast of load, in physical units (MW, MW^2)."""

    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(
            self, "sigma2", np.maximum(np.asarray(self.sigma2, dtype=float), SIGMA2_FLOOR)
        )

    def hour(self, t: int) -> GaussianHour:
        return GaussianHour(mu=float(self.mu[t]), sigma2=float(self.sigma2[t]))

    def __len__(self) -> int:
        return len(self.mu)


@dataclass(frozen=True)
class _SystemArrays:
    """Static arrays derived from a system, cached per problem."""

    flow_mat: np.ndarray      # (L, G) generation part of each line flow
    gammas: np.ndarray        # (L,)
    limits: np.ndarray        # (L,)
    chain: np.ndarray         # (L, G) d(threshold)/dP
    scale: np.ndarray         # (L,) lambda_l * |gamma|
    a: np.ndarray             # (G,) quadratic cost
    b: np.ndarray             # (G,) linear cost
    c_total: float            # sum of fixed costs per hour


def _system_arrays(system: SystemConfig) -> _SystemArrays:
    flow_mat = system.flow_matrix()
    gammas = np.array([system.line_gamma(ln) for ln in system.lines])
    limits = np.array([ln.flow_limit for ln in system.lines])
    chain = flow_mat / gammas[:, None] if len(system.lines) else np.zeros((0, system.n_gen))
    return _SystemArrays(
        flow_mat=flow_mat,
        gammas=gammas,
        limits=limits,
        chain=chain,
        scale=system.lambda_l * np.abs(gammas),
        a=np.array([g.a for g in system.generators]),
        b=np.array([g.b for g in system.generators]),
        c_total=float(sum(g.c for g in system.generators)),
    )


@dataclass(frozen=True)
class SedProblem:
    system: SystemConfig
    dist: ForecastDistribution
    constraints: ConstraintSet
    arrays: _SystemArrays = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.dist) != self.system.horizon:
            raise ValueError(
                f"forecast horizon {len(self.dist)} != system horizon {self.system.horizon}"
            )
        object.__setattr__(self, "arrays", _system_arrays(self.system))


def make_problem(system: SystemConfig, dist: ForecastDistribution) -> SedProblem:
    return SedProblem(system=system, dist=dist, constraints=build_constraints(system))


@dataclass(frozen=True)
class ObjectiveEval:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray


def _check_shape(p: np.ndarray, prob: SedProblem) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    expect = (prob.system.horizon, prob.system.n_gen)
    if p.shape != expect:
        raise ValueError(f"dispatch shape {p.shape} != {expect}")
    return p


class _HourTerms:
    """All per-hour penalty values and threshold derivatives, vectorized.

    Balance arrays have shape (T,), per-line arrays (T, L).  Derivatives are
    with respect to the thresholds; the ``lambda * |gamma|`` scaling is
    already applied to the flow terms.
    """

    def __init__(self, p: np.ndarray, prob: SedProblem):
        sys_ = prob.system
        arr = prob.arrays
        mu = prob.dist.mu
        sigma2 = prob.dist.sigma2
        sigma = np.sqrt(sigma2)
        lam_s, lam_e = sys_.lambda_s, sys_.lambda_e
        lam = lam_s + lam_e

        self.s = p.sum(axis=1)
        z = (self.s - mu) / sigma
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z) / sigma
        cdf = ndtr(z)
        dev = self.s - mu
        self.alpha_value = lam * (sigma2 * pdf + dev * cdf) - lam_s * dev
        self.alpha_d = lam * cdf - lam_s
        self.alpha_d2 = lam * pdf
        self.balance_pdf = pdf

        if arr.gammas.size:
            g_parts = p @ arr.flow_mat.T                      # (T, L)
            s_plus = (g_parts - arr.limits) / arr.gammas
            s_minus = (g_parts + arr.limits) / arr.gammas
            mu_c = mu[:, None]
            sig_c = sigma[:, None]
            sig2_c = sigma2[:, None]

            def parts(thr):
                zt = (thr - mu_c) / sig_c
                pdf_t = _INV_SQRT_2PI * np.exp(-0.5 * zt * zt) / sig_c
                cdf_t = ndtr(zt)
                below = sig2_c * pdf_t + (thr - mu_c) * cdf_t
                return pdf_t, cdf_t, below

            pdf_p, cdf_p, below_p = parts(s_plus)
            pdf_m, cdf_m, below_m = parts(s_minus)
            pos = arr.gammas > 0
            above_p = below_p - (s_plus - mu_c)
            above_m = below_m - (s_minus - mu_c)
            # gamma > 0: overload is a below-threshold event at s_plus and an
            # above-threshold event at s_minus; gamma < 0 swaps the roles.
            plus_value = np.where(pos, below_p, above_p) * arr.scale
            minus_value = np.where(pos, above_m, below_m) * arr.scale
            plus_d = np.where(pos, cdf_p, cdf_p - 1.0) * arr.scale
            minus_d = np.where(pos, cdf_m - 1.0, cdf_m) * arr.scale
            self.flow_value = (plus_value + minus_value).sum(axis=1)
            self.flow_d_sum = plus_d + minus_d                # (T, L)
            self.flow_d2_sum = (pdf_p + pdf_m) * arr.scale    # (T, L)
            self.flow_pdf_sum = self.flow_d2_sum
            self.s_plus, self.s_minus = s_plus, s_minus
            self.pdf_p, self.pdf_m = pdf_p * arr.scale, pdf_m * arr.scale
        else:
            t_hours = p.shape[0]
            self.flow_value = np.zeros(t_hours)
            self.flow_d_sum = np.zeros((t_hours, 0))
            self.flow_d2_sum = np.zeros((t_hours, 0))
            self.s_plus = self.s_minus = np.zeros((t_hours, 0))
            self.pdf_p = self.pdf_m = np.zeros((t_hours, 0))

        self.quad_value = 0.5 * (dev**2 + sigma2) + p**2 @ arr.a + p @ arr.b + arr.c_total
        self.dev = dev


def objective(p: np.ndarray, prob: SedProblem) -> float:
    p = _check_shape(p, prob)
    terms = _HourTerms(p, prob)
    return float((terms.alpha_value + terms.flow_value + terms.quad_value).sum())


def gradient(p: np.ndarray, prob: SedProblem) -> np.ndarray:
    """Exact gradient, flattened hour-major to match ``vec(P)``."""
    p = _check_shape(p, prob)
    arr = prob.arrays
    terms = _HourTerms(p, prob)
    grad = terms.alpha_d[:, None] + terms.dev[:, None] + 2.0 * arr.a * p + arr.b
    if arr.gammas.size:
        grad = grad + terms.flow_d_sum @ arr.chain
    return grad.reshape(-1)


def hessian(p: np.ndarray, prob: SedProblem) -> np.ndarray:
    """Exact Hessian (block-diagonal by hour), nudged positive definite.

    Each hour block is a sum of rank-one outer products plus the diagonal
    cost curvature, so it is positive semidefinite by construction; a ridge
    of at most ``MIN_BLOCK_EIG`` plus the block's (tiny, possibly negative)
    smallest eigenvalue is added so downstream quadratic subproblems are
    strictly convex.  The nudge is far below the finite-difference
    verification tolerance.
    """
    p = _check_shape(p, prob)
    sys_ = prob.system
    arr = prob.arrays
    n_gen = sys_.n_gen
    t_hours = sys_.horizon
    terms = _HourTerms(p, prob)

    ones = np.ones((n_gen, n_gen))
    blocks = (terms.alpha_d2 + 1.0)[:, None, None] * ones
    if arr.gammas.size:
        blocks = blocks + np.einsum(
            "tl,lg,lh->tgh", terms.flow_d2_sum, arr.chain, arr.chain
        )
    blocks = blocks + np.diag(2.0 * arr.a)
    blocks = 0.5 * (blocks + np.swapaxes(blocks, 1, 2))
    smallest = np.linalg.eigvalsh(blocks)[:, 0]
    ridge = np.maximum(0.0, MIN_BLOCK_EIG - smallest)
    if np.any(ridge > 0):
        blocks = blocks + ridge[:, None, None] * np.eye(n_gen)

    h_full = np.zeros((t_hours * n_gen, t_hours * n_gen))
    for t in range(t_hours):
        sl = slice(t * n_gen, (t + 1) * n_gen)
        h_full[sl, sl] = blocks[t]
    return h_full


def evaluate(p: np.ndarray, prob: SedProblem) -> ObjectiveEval:
    return ObjectiveEval(
        value=objective(p, prob), gradient=gradient(p, prob), hessian=hessian(p, prob)
    )


def qp_linear_term(p: np.ndarray, grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Linear coefficient making the local quadratic model's gradient equal
    the true gradient at the expansion point: J = grad - H @ vec(P)."""
    p_flat = np.asarray(p, dtype=float).reshape(-1)
    return np.asarray(grad, dtype=float) - hess @ p_flat


def grad_cross_mu(p: np.ndarray, prob: SedProblem) -> np.ndarray:
    """d(gradient)/d(mu): (T*n_gen, T) matrix, nonzero only in hour blocks.

    Every closed-form first derivative depends on mu_t through the Gaussian
    CDF at its threshold; d(CDF(s; mu, sigma2))/d(mu) = -PDF(s; mu, sigma2).
    The regularizer contributes -1 per generator of the hour.
    """
    p = _check_shape(p, prob)
    sys_ = prob.system
    arr = prob.arrays
    n_gen = sys_.n_gen
    lam = sys_.lambda_s + sys_.lambda_e
    terms = _HourTerms(p, prob)
    cols = -(lam * terms.balance_pdf + 1.0)[:, None] * np.ones(n_gen)
    if arr.gammas.size:
        cols = cols - (terms.pdf_p + terms.pdf_m) @ arr.chain
    out = np.zeros((sys_.horizon * n_gen, sys_.horizon))
    for t in range(sys_.horizon):
        out[t * n_gen : (t + 1) * n_gen, t] = cols[t]
    return out


def grad_cross_sigma2(p: np.ndarray, prob: SedProblem) -> np.ndarray:
    """d(gradient)/d(sigma2): (T*n_gen, T) matrix.

    d(CDF(s; mu, sigma2))/d(sigma2) = -PDF(s; mu, sigma2)*(s - mu)/(2*sigma2);
    cost and regularizer terms do not depend on the variance.
    """
    p = _check_shape(p, prob)
    sys_ = prob.system
    arr = prob.arrays
    n_gen = sys_.n_gen
    mu = prob.dist.mu
    sigma2 = prob.dist.sigma2
    lam = sys_.lambda_s + sys_.lambda_e
    terms = _HourTerms(p, prob)

    bal = -lam * terms.balance_pdf * (terms.s - mu) / (2.0 * sigma2)
    cols = bal[:, None] * np.ones(n_gen)
    if arr.gammas.size:
        d_p = -terms.pdf_p * (terms.s_plus - mu[:, None]) / (2.0 * sigma2[:, None])
        d_m = -terms.pdf_m * (terms.s_minus - mu[:, None]) / (2.0 * sigma2[:, None])
        cols = cols + (d_p + d_m) @ arr.chain
    out = np.zeros((sys_.horizon * n_gen, sys_.horizon))
    for t in range(sys_.horizon):
        out[t * n_gen : (t + 1) * n_gen, t] = cols[t]
    return out
