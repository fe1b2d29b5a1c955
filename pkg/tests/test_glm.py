import math

import numpy as np
import pytest

from spatialglm.data import TargetSet
from spatialglm.families import BERNOULLI, GAUSSIAN, POISSON
from spatialglm.glm import (
    NonExistenceError,
    SingularHessianError,
    maximize_glm,
    population_estimand,
    tau,
    tau_jacobian,
)


def targets_1d(x):
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    locs = np.arange(len(x), dtype=float).reshape(-1, 1)
    return TargetSet(locs, x)


def grid_bisect_tau_1d(x, a, fam, lo=-10.0, hi=10.0, step=1e-4):
    """Independent 1-d oracle: objective grid search refined by bisection
    on the gradient (which is strictly decreasing by concavity)."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    grid = np.arange(lo, hi + step, step)
    theta = np.outer(grid, x)
    obj = (theta * a - fam.cumulant(theta)).sum(axis=1)
    i = int(np.argmax(obj))
    lo_b, hi_b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]

    def gradient(b):
        return float(np.sum(x * (a - fam.mean(x * b))))

    for _ in range(200):
        mid = 0.5 * (lo_b + hi_b)
        if gradient(mid) > 0:
            lo_b = mid
        else:
            hi_b = mid
    return 0.5 * (lo_b + hi_b)


def finite_difference_jacobian(a, targets, fam, h=1e-6):
    cols = []
    for m in range(len(a)):
        up = a.copy()
        dn = a.copy()
        up[m] += h
        dn[m] -= h
        bp, _ = tau(up, targets, fam)
        bm, _ = tau(dn, targets, fam)
        cols.append((bp - bm) / (2 * h))
    return np.column_stack(cols)


def test_bernoulli_symmetric_pair_gives_zero():
    t = targets_1d([1.0, -1.0])
    beta, report = tau(np.array([0.5, 0.5]), t, BERNOULLI)
    assert report.converged
    assert abs(beta[0]) < 1e-12


def test_poisson_single_point():
    t = targets_1d([1.0])
    beta, _ = tau(np.array([math.e]), t, POISSON)
    assert beta[0] == pytest.approx(1.0, abs=1e-10)


def test_gaussian_equals_least_squares():
    rng = np.random.default_rng(11)
    for m, p in [(6, 2), (10, 3), (4, 1)]:
        X = rng.normal(size=(m, p))
        a = rng.normal(size=m)
        t = TargetSet(rng.normal(size=(m, 2)), X)
        beta, _ = tau(a, t, GAUSSIAN)
        # normal-equations oracle solved independently
        ref = np.linalg.lstsq(X, a, rcond=None)[0]
        assert np.allclose(beta, ref, atol=1e-10)


def test_bernoulli_against_grid_bisection_oracle():
    x = np.array([1.0, 0.5, -1.0])
    a = np.array([0.8, 0.6, 0.3])
    beta, _ = tau(a, targets_1d(x), BERNOULLI)
    ref = grid_bisect_tau_1d(x, a, BERNOULLI)
    assert abs(beta[0] - ref) < 1e-6


def test_tau_oracle_suite_25_instances():
    rng = np.random.default_rng(42)
    for _ in range(25):
        m = int(rng.integers(2, 8))
        x = rng.normal(size=m)
        x[np.abs(x) < 0.1] += 0.5  # keep the design away from rank trouble
        a = rng.uniform(0.1, 0.9, size=m)
        beta, _ = tau(a, targets_1d(x), BERNOULLI)
        ref = grid_bisect_tau_1d(x, a, BERNOULLI)
        assert abs(beta[0] - ref) < 1e-6


def test_jacobian_gaussian_closed_form():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(7, 2))
    t = TargetSet(rng.normal(size=(7, 2)), X)
    a = rng.normal(size=7)
    J = tau_jacobian(a, t, GAUSSIAN)
    ref = np.linalg.solve(X.T @ X, X.T)
    assert np.allclose(J, ref, atol=1e-12)
    # independent of a for the identity family
    J2 = tau_jacobian(a + 1.3, t, GAUSSIAN)
    assert np.allclose(J, J2, atol=1e-12)


def test_jacobian_left_inverse_symmetric_case():
    t = targets_1d([1.0, -1.0])
    a = np.array([0.5, 0.5])
    J = tau_jacobian(a, t, BERNOULLI)
    assert np.allclose(J @ t.covariates, np.eye(1), atol=1e-12)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(25):
        m, p = 5, 2
        X = rng.normal(size=(m, p))
        t = TargetSet(rng.normal(size=(m, 2)), X)
        a = rng.uniform(0.2, 0.8, size=m)
        J = tau_jacobian(a, t, BERNOULLI)
        ref = finite_difference_jacobian(a, t, BERNOULLI)
        assert np.max(np.abs(J - ref)) < 1e-4


def test_jacobian_first_order_condition_identity():
    rng = np.random.default_rng(19)
    for _ in range(10):
        m, p = 6, 2
        X = rng.normal(size=(m, p))
        t = TargetSet(rng.normal(size=(m, 2)), X)
        a = rng.uniform(0.2, 0.8, size=m)
        beta, _ = tau(a, t, BERNOULLI)
        J = tau_jacobian(a, t, BERNOULLI, beta=beta)
        gamma = BERNOULLI.variance(X @ beta)
        lhs = (X * gamma[:, None]).T @ X @ J
        assert np.max(np.abs(lhs - X.T)) < 1e-8


def test_concavity_returned_point_is_max():
    rng = np.random.default_rng(23)
    m, p = 8, 2
    X = rng.normal(size=(m, p))
    t = TargetSet(rng.normal(size=(m, 2)), X)
    a = rng.uniform(0.2, 0.8, size=m)
    beta, _ = tau(a, t, BERNOULLI)

    def objective(b):
        theta = X @ b
        return float(np.sum(theta * a - BERNOULLI.cumulant(theta)))

    base = objective(beta)
    for _ in range(64):
        eps = rng.normal(size=p)
        eps *= 1e-3 / np.linalg.norm(eps)
        assert base >= objective(beta + eps)


def test_gaussian_scale_equivariance():
    rng = np.random.default_rng(31)
    X = rng.normal(size=(6, 2))
    t = TargetSet(rng.normal(size=(6, 2)), X)
    a = rng.normal(size=6)
    b1, _ = tau(a, t, GAUSSIAN)
    b3, _ = tau(3.0 * a, t, GAUSSIAN)
    assert np.allclose(b3, 3.0 * b1, atol=1e-9)


def test_boundary_divergence_raises_non_existence():
    t = targets_1d([1.0, -1.0])
    with pytest.raises(NonExistenceError):
        tau(np.array([1.0, 0.0]), t, BERNOULLI)


def test_mean_outside_closure_rejected():
    t = targets_1d([1.0])
    with pytest.raises(ValueError, match="closed mean domain"):
        tau(np.array([1.5]), t, BERNOULLI)


def test_singular_hessian_detected():
    X = np.array([[1.0, 1e9], [1.0, 1e9 + 1e-6], [1.0, 1e9 - 1e-6]])
    with pytest.raises(SingularHessianError):
        maximize_glm(X, np.array([0.4, 0.5, 0.6]), BERNOULLI)


def test_population_estimand_intercept_only_logit():
    m = 5
    t = TargetSet(np.arange(m, dtype=float).reshape(-1, 1), np.ones((m, 1)))
    c = 0.3
    beta = population_estimand(np.full(m, c), t, BERNOULLI)
    assert beta[0] == pytest.approx(math.log(c / (1 - c)), abs=1e-10)


def test_counterexample_population_estimand_is_zero():
    t = TargetSet(np.array([[0.5], [-0.5]]), np.array([[0.5], [-0.5]]))
    beta = population_estimand(np.array([0.25, 0.25]), t, GAUSSIAN)
    assert abs(beta[0]) < 1e-12
