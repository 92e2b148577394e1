import itertools

import numpy as np
import pytest

from taskcast import sed
from taskcast.sed import ForecastDistribution, make_problem
from taskcast.solver import (
    QpError,
    SqpSettings,
    check_ramp_feasibility,
    solve_qp,
    solve_sed,
)

from conftest import make_single_gen_system, rng_for


# ---------------------------------------------------------------------------
# Oracles


def enumerate_box_diff_qp(H, J, lo, hi, D=None, d=None, tol=1e-9):
    """Exhaustive active-set enumeration for min .5x'Hx + J'x subject to
    lo <= x <= hi and optional difference rows D x <= d.

    Every variable is free, at its lower, or at its upper bound; every
    difference row is active or not.  Solves each candidate equality system
    and keeps the feasible KKT point with the lowest objective.
    """
    n = J.size
    n_diff = 0 if D is None else D.shape[0]
    best_obj, best_x = np.inf, None
    for pattern in itertools.product((0, 1, 2), repeat=n):
        fixed_idx = [i for i, s in enumerate(pattern) if s]
        free_idx = [i for i, s in enumerate(pattern) if not s]
        x = np.zeros(n)
        for i in fixed_idx:
            x[i] = lo[i] if pattern[i] == 1 else hi[i]
        for diff_mask in itertools.product((0, 1), repeat=n_diff):
            act = [j for j, m in enumerate(diff_mask) if m]
            nf, na = len(free_idx), len(act)
            if nf + na > 0:
                kkt = np.zeros((nf + na, nf + na))
                rhs = np.zeros(nf + na)
                if nf:
                    kkt[:nf, :nf] = H[np.ix_(free_idx, free_idx)]
                    rhs[:nf] = -J[free_idx]
                    if fixed_idx:
                        rhs[:nf] -= H[np.ix_(free_idx, fixed_idx)] @ x[fixed_idx]
                if na:
                    Da = D[act]
                    kkt[:nf, nf:] = Da[:, free_idx].T
                    kkt[nf:, :nf] = Da[:, free_idx]
                    rhs[nf:] = d[act] - Da[:, fixed_idx] @ x[fixed_idx] if fixed_idx else d[act]
                try:
                    sol = np.linalg.solve(kkt, rhs)
                except np.linalg.LinAlgError:
                    continue
                x_c = x.copy()
                x_c[free_idx] = sol[:nf]
                nu = sol[nf:]
            else:
                x_c = x.copy()
                nu = np.zeros(0)
            # primal feasibility
            if np.any(x_c < lo - tol) or np.any(x_c > hi + tol):
                continue
            if n_diff and np.any(D @ x_c > d + tol):
                continue
            # dual feasibility: box multipliers from stationarity residual
            g = H @ x_c + J
            if na:
                g = g + D[act].T @ nu
            ok = True
            if np.any(nu < -tol):
                ok = False
            for i, s in enumerate(pattern):
                if s == 1 and g[i] < -tol:    # at lower: multiplier = +g_i >= 0
                    ok = False
                if s == 2 and g[i] > tol:     # at upper: multiplier = -g_i >= 0
                    ok = False
                if s == 0 and abs(g[i]) > 1e-6 * (1 + abs(J[i])):
                    ok = False
            if not ok:
                continue
            obj = 0.5 * x_c @ H @ x_c + J @ x_c
            if obj < best_obj:
                best_obj, best_x = obj, x_c
    return best_x


def projected_gradient_boxes(prob, lo, hi, max_iter=300_000, tol=1e-11):
    """Projected gradient descent with backtracking on the dispatch objective;
    valid as an oracle when only box constraints bind."""
    shape = (prob.system.horizon, prob.system.n_gen)
    x = np.clip(
        np.tile((lo + hi) / 2.0, (shape[0], 1)).reshape(-1), np.tile(lo, shape[0]),
        np.tile(hi, shape[0]),
    )
    lo_full = np.tile(lo, shape[0])
    hi_full = np.tile(hi, shape[0])
    f = sed.objective(x.reshape(shape), prob)
    step = 1.0
    for _ in range(max_iter):
        g = sed.gradient(x.reshape(shape), prob)
        while True:
            x_new = np.clip(x - step * g, lo_full, hi_full)
            f_new = sed.objective(x_new.reshape(shape), prob)
            if f_new <= f + 1e-12 or step < 1e-14:
                break
            step *= 0.5
        if np.abs(x_new - x).max() < tol:
            x, f = x_new, f_new
            break
        x, f = x_new, f_new
        step = min(step * 2.0, 1.0)
    return x.reshape(shape), f


def grid_refine_1d(fn, lo, hi, rounds=40, points=60):
    """Grid search with shrinking brackets, a derivative-free 1-D oracle."""
    for _ in range(rounds):
        xs = np.linspace(lo, hi, points)
        vals = [fn(x) for x in xs]
        i = int(np.argmin(vals))
        lo = xs[max(i - 1, 0)]
        hi = xs[min(i + 1, points - 1)]
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# QP solver


class TestSolveQp:
    def test_active_upper_bound_by_hand(self):
        # min .5p^2 - p on [0, 0.5] -> p = 0.5, upper dual 0.5
        sol = solve_qp(
            np.array([[1.0]]),
            np.array([-1.0]),
            np.array([[1.0], [-1.0]]),
            np.array([0.5, 0.0]),
        )
        assert sol.p[0] == pytest.approx(0.5, abs=1e-10)
        assert sol.duals[0] == pytest.approx(0.5, abs=1e-8)
        assert sol.active_set.tolist() == [True, False]

    def test_interior_optimum_by_hand(self):
        sol = solve_qp(
            np.array([[1.0]]),
            np.array([-1.0]),
            np.array([[1.0], [-1.0]]),
            np.array([2.0, 0.0]),
        )
        assert sol.p[0] == pytest.approx(1.0, abs=1e-10)
        assert np.all(sol.duals <= 1e-8)
        assert not sol.active_set.any()

    def test_kkt_invariants(self):
        rng = rng_for(100)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            a = rng.normal(size=(n, n))
            H = a @ a.T + n * np.eye(n)
            J = rng.normal(0, 5, n)
            lo = rng.uniform(-3, -0.5, n)
            hi = rng.uniform(0.5, 3, n)
            G = np.vstack([np.eye(n), -np.eye(n)])
            h = np.concatenate([hi, -lo])
            sol = solve_qp(H, J, G, h)
            scale = 1.0 + max(np.abs(J).max(), np.abs(h).max())
            assert np.abs(H @ sol.p + J + G.T @ sol.duals).max() <= 1e-7 * scale
            assert np.all(G @ sol.p - h <= 1e-8 * scale)
            assert np.abs(sol.duals * (G @ sol.p - h)).max() <= 1e-7 * scale

    def test_matches_enumeration_oracle(self):
        rng = rng_for(200)
        for trial in range(60):
            n = int(rng.integers(2, 7))
            a = rng.normal(size=(n, n))
            H = a @ a.T + n * np.eye(n)
            J = rng.normal(0, 5, n)
            lo = rng.uniform(-3, -0.5, n)
            hi = rng.uniform(0.5, 3, n)
            rows = [np.eye(n), -np.eye(n)]
            rhs = [hi, -lo]
            D = d = None
            if trial % 2 and n >= 3:
                D = np.zeros((1, n))
                D[0, 0], D[0, 1] = 1.0, -1.0
                d = np.array([float(rng.uniform(0.2, 1.0))])
                rows.append(D)
                rhs.append(d)
            G = np.vstack(rows)
            h = np.concatenate(rhs)
            sol = solve_qp(H, J, G, h)
            x_oracle = enumerate_box_diff_qp(H, J, lo, hi, D, d)
            assert x_oracle is not None
            assert np.abs(sol.p - x_oracle).max() <= 1e-8

    def test_warm_start_same_answer(self):
        rng = rng_for(300)
        n = 5
        a = rng.normal(size=(n, n))
        H = a @ a.T + n * np.eye(n)
        J = rng.normal(0, 5, n)
        G = np.vstack([np.eye(n), -np.eye(n)])
        h = np.concatenate([np.full(n, 2.0), np.full(n, 2.0)])
        cold = solve_qp(H, J, G, h)
        warm = solve_qp(H, J, G, h, warm_start=cold.p)
        assert np.abs(cold.p - warm.p).max() <= 1e-9

    def test_deterministic(self):
        rng = rng_for(400)
        n = 4
        a = rng.normal(size=(n, n))
        H = a @ a.T + n * np.eye(n)
        J = rng.normal(size=n)
        G = np.vstack([np.eye(n), -np.eye(n)])
        h = np.full(2 * n, 1.5)
        s1 = solve_qp(H, J, G, h)
        s2 = solve_qp(H, J, G, h)
        assert np.array_equal(s1.p, s2.p)
        assert np.array_equal(s1.duals, s2.duals)


# ---------------------------------------------------------------------------
# SQP driver


class TestSolveSed:
    def test_single_gen_matches_grid_oracle(self):
        # sigma at the floor, wide box, a=0.5: smooth 1-D problem
        sysc = make_single_gen_system(a=0.5, b=0.0, c=0.0, p_max=100.0)
        mu = 20.0
        prob = make_problem(sysc, ForecastDistribution(np.array([mu]), np.array([1.0])))
        res = solve_sed(prob)
        assert res.converged

        def f(p):
            return sed.objective(np.array([[p]]), prob)

        p_oracle = grid_refine_1d(f, 0.0, 100.0)
        assert res.p_star[0, 0] == pytest.approx(p_oracle, abs=1e-4)

    def test_capacity_shortage_pins_upper_bounds(self, ref_system_short):
        mu = np.full(4, 5000.0)  # far above the 1300 MW capacity
        prob = make_problem(ref_system_short, ForecastDistribution(mu, np.full(4, 400.0)))
        res = solve_sed(prob)
        p_max = np.array([g.p_max for g in ref_system_short.generators])
        assert np.allclose(res.p_star, np.tile(p_max, (4, 1)), atol=1e-6)
        # upper-bound rows carry positive duals (KKT sign check)
        rows = prob.constraints.g_matrix
        upper_rows = [
            i
            for i in range(rows.shape[0])
            if res.active_set[i] and np.count_nonzero(rows[i]) == 1 and rows[i].max() == 1.0
        ]
        assert len(upper_rows) == 12

    def test_reference_convergence_and_kkt(self, ref_system):
        rng = rng_for(500)
        base = 820 + 120 * np.sin(np.arange(24) / 24 * 2 * np.pi - 1.3)
        prob = make_problem(
            ref_system, ForecastDistribution(base, np.full(24, 900.0))
        )
        res = solve_sed(prob)
        assert res.converged
        assert res.outer_iterations <= 20
        assert res.kkt_residual < 1e-5
        # monotone step decrease after the opening iterations
        steps = res.step_norms
        for i in range(3, len(steps)):
            assert steps[i] <= steps[i - 1] + 1e-12

    def test_primal_feasibility(self, ref_system_short):
        rng = rng_for(600)
        for _ in range(5):
            mu = rng.uniform(500, 1100, size=4)
            prob = make_problem(
                ref_system_short, ForecastDistribution(mu, np.full(4, 900.0))
            )
            res = solve_sed(prob)
            viol = prob.constraints.g_matrix @ res.p_star.reshape(-1) - prob.constraints.h_vector
            assert viol.max() <= 1e-8 * (1 + np.abs(prob.constraints.h_vector).max())

    def test_matches_projected_gradient_oracle(self, ref_system_short):
        mu = np.array([650.0, 720.0, 800.0, 760.0])
        prob = make_problem(
            ref_system_short, ForecastDistribution(mu, np.full(4, 900.0))
        )
        res = solve_sed(prob)
        lo = np.array([g.p_min for g in ref_system_short.generators])
        hi = np.array([g.p_max for g in ref_system_short.generators])
        p_pg, f_pg = projected_gradient_boxes(prob, lo, hi)
        # ramps must be slack at the oracle solution for the comparison to hold
        check_ramp_feasibility(ref_system_short)
        deltas = np.abs(np.diff(p_pg, axis=0))
        assert deltas.max() < 140.0
        assert res.objective == pytest.approx(f_pg, rel=1e-6)

    def test_objective_monotone_descent(self, ref_system_short):
        mu = np.array([600.0, 900.0, 700.0, 1000.0])
        prob = make_problem(
            ref_system_short, ForecastDistribution(mu, np.full(4, 2500.0))
        )
        # a deliberately bad starting point
        p0 = np.tile([100.0, 50.0, 0.0], (4, 1))
        res = solve_sed(prob, p_init=p0)
        assert res.converged
        f_prev = sed.objective(p0, prob)
        # re-walk the accepted iterates by solving again step by step is
        # internal; instead assert final <= initial and KKT holds
        assert res.objective <= f_prev + 1e-12
        assert res.kkt_residual < 1e-5

    def test_deterministic(self, ref_system_short):
        mu = np.array([650.0, 720.0, 800.0, 760.0])
        prob = make_problem(
            ref_system_short, ForecastDistribution(mu, np.full(4, 900.0))
        )
        a = solve_sed(prob)
        b = solve_sed(prob)
        assert np.array_equal(a.p_star, b.p_star)
        assert np.array_equal(a.duals, b.duals)

    def test_infeasible_ramp_band_reported(self):
        sysc = make_single_gen_system(p_min=0.0, p_max=100.0)
        from dataclasses import replace
        from taskcast.grid import Generator, validate_system

        bad = validate_system(
            replace(
                sysc,
                generators=(
                    Generator("g1", "b1", 0.1, 1.0, 0.0, 0.0, 100.0, 5.0, 5.0, p_initial=500.0),
                ),
            )
        )
        prob = make_problem(bad, ForecastDistribution(np.array([50.0]), np.array([25.0])))
        with pytest.raises(QpError, match="no output satisfies"):
            solve_sed(prob)
