import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dopf.qp import INFEASIBLE, OPTIMAL, QpProblem, QpSolution, kkt_residuals, solve_qp

N_RANDOM = 200


def general_qp(rng):
    """Feasible by construction: x0 satisfies every row."""
    n = int(rng.integers(2, 13))
    me = int(rng.integers(0, min(4, n)))
    mi = int(rng.integers(1, 16))
    M = rng.standard_normal((n, n))
    P = M.T @ M + 1e-3 * np.eye(n)
    A = rng.standard_normal((me, n))
    G = rng.standard_normal((mi, n))
    x0 = rng.standard_normal(n)
    return QpProblem(P, rng.standard_normal(n), A, A @ x0, G, G @ x0 + rng.uniform(0, 1, mi))


def box_qp(rng):
    n = int(rng.integers(2, 13))
    M = rng.standard_normal((n, n))
    P = M.T @ M + 1e-3 * np.eye(n)
    lo = -rng.uniform(0.1, 2.0, n)
    hi = rng.uniform(0.1, 2.0, n)
    G = np.vstack([np.eye(n), -np.eye(n)])
    return QpProblem(P, 3.0 * rng.standard_normal(n), None, None, G, np.concatenate([hi, -lo])), lo, hi


def projected_gradient(P, q, lo, hi, tol=1e-12, max_iter=200_000):
    """Accelerated projected gradient with gradient-based restart over a box."""
    L = np.linalg.eigvalsh(P)[-1]
    x = np.clip(np.zeros_like(q), lo, hi)
    y = x.copy()
    t = 1.0
    for k in range(max_iter):
        xn = np.clip(y - (P @ y + q) / L, lo, hi)
        if (xn - x) @ (y - xn) > 0:
            t, y = 1.0, x
            continue
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = xn + (t - 1.0) / tn * (xn - x)
        t, x = tn, xn
        if k % 50 == 0 and np.abs(x - np.clip(x - (P @ x + q) / L, lo, hi)).max() < tol:
            break
    return x


def lagrangian_dual_value(p, s):
    # min_x L(x, nu, lam) is attained where P x = -(q + A'nu + G'lam)
    c = p.q + p.A.T @ s.nu + p.Gm.T @ s.lam
    x = np.linalg.lstsq(p.P, -c, rcond=None)[0]
    return 0.5 * x @ p.P @ x + c @ x - p.b @ s.nu - p.h @ s.lam


# ---------------------------------------------------------------- analytic cases

def test_scalar_with_lower_bound():
    s = solve_qp(QpProblem([[2.0]], [0.0], None, None, [[-1.0]], [-1.0]))
    assert s.status == OPTIMAL
    assert s.x[0] == pytest.approx(1.0, abs=1e-10)
    assert s.lam[0] == pytest.approx(2.0, abs=1e-9)


def test_equality_only():
    s = solve_qp(QpProblem(np.eye(2), [0.0, 0.0], [[1.0, 1.0]], [1.0]))
    assert s.status == OPTIMAL
    assert np.allclose(s.x, [0.5, 0.5], atol=1e-14)
    assert s.nu[0] == pytest.approx(-0.5, abs=1e-14)
    assert s.lam.size == 0


def test_residuals_at_analytic_optimum_are_zero():
    p = QpProblem([[2.0]], [0.0], None, None, [[-1.0]], [-1.0])
    s = QpSolution(np.array([1.0]), np.zeros(0), np.array([2.0]), OPTIMAL, None)
    r = kkt_residuals(p, s)
    assert r.max() == 0.0


def test_stationarity_is_linear_in_perturbation():
    p = QpProblem(np.eye(2), [0.0, 0.0], [[1.0, 1.0]], [1.0])
    s = QpSolution(np.array([0.5 + 1e-3, 0.5]), np.array([-0.5]), np.zeros(0), OPTIMAL, None)
    r = kkt_residuals(p, s)
    assert r.stationarity == pytest.approx(1e-3, rel=1e-9)
    assert r.primal_eq == pytest.approx(1e-3, rel=1e-9)


def test_unconstrained():
    s = solve_qp(QpProblem([[4.0, 1.0], [1.0, 3.0]], [1.0, 2.0]))
    assert np.allclose(s.x, np.linalg.solve([[4, 1], [1, 3]], [-1, -2]), atol=1e-14)


def test_lp_with_zero_hessian():
    s = solve_qp(QpProblem(np.zeros((2, 2)), [1.0, 2.0], [[1.0, 1.0]], [1.0], -np.eye(2), [0.0, 0.0]))
    assert s.status == OPTIMAL
    assert np.allclose(s.x, [1.0, 0.0], atol=1e-8)


def test_infeasible_detected():
    s = solve_qp(QpProblem([[2.0]], [0.0], None, None, [[1.0], [-1.0]], [-1.0, -1.0]))
    assert s.status == INFEASIBLE


def test_inconsistent_equalities_detected():
    s = solve_qp(QpProblem(np.eye(2), [1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]], [1.0, 2.0]))
    assert s.status == INFEASIBLE


def test_unbounded_does_not_claim_optimality():
    s = solve_qp(QpProblem(np.zeros((1, 1)), [-1.0], None, None, [[-1.0]], [0.0]))
    assert s.status != OPTIMAL


# ---------------------------------------------------------------- errors

def test_dimension_mismatch():
    with pytest.raises(ValueError):
        solve_qp(QpProblem(np.eye(3), np.zeros(2)))
    p = QpProblem(np.eye(2), np.zeros(2), None, None, np.ones((2, 2)), np.zeros(2))
    p.h = np.zeros(3)
    with pytest.raises(ValueError):
        solve_qp(p)


def test_non_psd_rejected():
    with pytest.raises(ValueError, match="positive semidefinite"):
        solve_qp(QpProblem(np.diag([1.0, -1.0]), np.zeros(2)))


def test_asymmetric_rejected():
    with pytest.raises(ValueError, match="symmetric"):
        solve_qp(QpProblem([[1.0, 1.0], [0.0, 1.0]], np.zeros(2)))


# ---------------------------------------------------------------- random suites

def random_qp_worst(rng, n=N_RANDOM):
    """Worst KKT residual and dual sign over general QPs, worst relative
    objective gap to projected gradient over box QPs, and failure count."""
    kkt = gap = 0.0
    lam_min = np.inf
    failures = 0
    for _ in range(n):
        p = general_qp(rng)
        s = solve_qp(p)
        failures += s.status != OPTIMAL
        kkt = max(kkt, kkt_residuals(p, s).max())
        lam_min = min(lam_min, s.lam.min())
        failures += p.objective(s.x) < lagrangian_dual_value(p, s) - 1e-8
    for _ in range(n):
        p, lo, hi = box_qp(rng)
        s = solve_qp(p)
        failures += s.status != OPTIMAL
        kkt = max(kkt, kkt_residuals(p, s).max())
        f_ref = p.objective(projected_gradient(p.P, p.q, lo, hi))
        gap = max(gap, abs(p.objective(s.x) - f_ref) / max(1.0, abs(f_ref)))
    return kkt, lam_min, gap, failures


def test_random_qps(rng):
    kkt, lam_min, gap, failures = random_qp_worst(rng)
    assert failures == 0
    assert kkt <= 1e-8
    assert lam_min >= -1e-10
    assert gap <= 1e-6


def test_determinism(rng):
    for _ in range(20):
        p = general_qp(rng)
        a, b = solve_qp(p), solve_qp(p)
        assert a.status == b.status
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.lam, b.lam)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_optimal_solutions_satisfy_tolerance(seed):
    p = general_qp(np.random.default_rng(seed))
    s = solve_qp(p, tol=1e-9)
    assert s.status == OPTIMAL
    assert kkt_residuals(p, s).max() <= 1e-8
    assert s.lam.min() >= -1e-10


def test_large_penalty_scaling(rng):
    # local subproblems carry rho ~ 1e6 on the voltage block
    for _ in range(20):
        p = general_qp(rng)
        p.P = p.P + np.diag(np.r_[np.zeros(p.n - 1), 1e6])
        p.q = p.q * 1e3
        s = solve_qp(p)
        assert s.status == OPTIMAL
        assert s.meta["scaled"].max() <= 1e-9
