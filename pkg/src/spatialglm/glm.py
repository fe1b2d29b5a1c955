"""Weighted maximum likelihood for canonical GLMs and its Jacobian.

The central object is the map ``tau`` sending a vector of target means A to

    tau(A) = argmax_beta  sum_m  x_m' beta A_m - kappa(x_m' beta),

the coefficient vector of the best-approximating GLM given covariates x_m.
The objective is smooth and concave, so a damped Newton iteration started at
beta = 0 converges to the global maximum whenever a maximizer exists.  The
Jacobian of ``tau`` follows from differentiating the first-order condition:

    tau'(A) = (X' Gamma X)^{-1} X',   Gamma = diag(kappa''(X tau(A))).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .data import TargetSet
from .families import ExponentialFamily

MAX_ITER = 200
DIVERGENCE_NORM = 1e6
CONDITION_LIMIT = 1e12
ARMIJO_C = 1e-4


class NonExistenceError(RuntimeError):
    """The likelihood maximizer does not exist (iterates diverged with
    boundary means, e.g. perfect separation)."""


class NonConvergenceError(RuntimeError):
    """Newton iteration failed to reach tolerance within the iteration cap."""


class SingularHessianError(RuntimeError):
    """The weighted information matrix is numerically singular."""


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_gradient_norm: float
    converged: bool


def _objective(theta, a, weights, fam):
    vals = theta * a - fam.cumulant(theta)
    if weights is not None:
        vals = weights * vals
    return float(np.sum(vals))


def _hessian_factor(X, gamma, weights):
    g = gamma if weights is None else weights * gamma
    H = (X * g[:, None]).T @ X
    if np.linalg.cond(H) > CONDITION_LIMIT:
        raise SingularHessianError(
            f"information matrix condition number exceeds {CONDITION_LIMIT:g}"
        )
    try:
        return cho_factor(H)
    except LinAlgError as exc:
        raise SingularHessianError(str(exc)) from None


def maximize_glm(
    X: np.ndarray,
    a: np.ndarray,
    fam: ExponentialFamily,
    weights: np.ndarray | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Maximize sum_i w_i (x_i' beta a_i - kappa(x_i' beta)) by damped Newton.

    Backtracking halves the step until the Armijo condition holds.  Raises
    NonExistenceError when iterates diverge while some a_i sits on the mean
    domain boundary (the classic separation pathology), NonConvergenceError
    on a stall, and SingularHessianError on unusable curvature.
    """
    X = np.asarray(X, dtype=float)
    a = np.asarray(a, dtype=float)
    n, p = X.shape
    wa = a if weights is None else weights * a
    tol = 1e-10 * max(1.0, float(np.linalg.norm(X.T @ wa)))

    beta = np.zeros(p)
    theta = X @ beta
    for it in range(MAX_ITER):
        resid = a - fam.mean(theta)
        if weights is not None:
            resid = weights * resid
        grad = X.T @ resid
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return beta, SolveReport(it, gnorm, True)

        factor = _hessian_factor(X, fam.variance(theta), weights)
        step = cho_solve(factor, grad)
        slope = float(grad @ step)  # positive: ascent direction

        obj = _objective(theta, a, weights, fam)
        # near the optimum the true improvement drops below one ulp of the
        # objective; the floor keeps rounding noise from rejecting sound steps
        floor = 16.0 * np.finfo(float).eps * (1.0 + abs(obj))
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            theta_cand = X @ cand
            gain = _objective(theta_cand, a, weights, fam) - obj
            if gain >= ARMIJO_C * t * slope - floor:
                break
            t *= 0.5
        else:
            raise NonConvergenceError(
                f"line search stalled at iteration {it} (gradient norm {gnorm:.3e})"
            )
        beta, theta = cand, theta_cand
        if np.linalg.norm(beta) > DIVERGENCE_NORM:
            if fam.on_mean_boundary(a):
                raise NonExistenceError(
                    "iterates diverged with boundary mean values; "
                    "the maximizer does not exist"
                )
            raise NonConvergenceError("iterates diverged")

    resid = a - fam.mean(theta)
    if weights is not None:
        resid = weights * resid
    gnorm = float(np.linalg.norm(X.T @ resid))
    if gnorm <= tol:
        return beta, SolveReport(MAX_ITER, gnorm, True)
    raise NonConvergenceError(
        f"no convergence in {MAX_ITER} iterations (gradient norm {gnorm:.3e})"
    )


def tau(
    a: np.ndarray, targets: TargetSet, fam: ExponentialFamily
) -> tuple[np.ndarray, SolveReport]:
    """Solve the target-covariate weighted ML problem for mean vector ``a``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (targets.m,):
        raise ValueError(f"mean vector has shape {a.shape}, expected ({targets.m},)")
    if not fam.in_mean_closure(a):
        raise ValueError(
            f"mean values outside the closed mean domain of {fam.name}"
        )
    return maximize_glm(targets.covariates, a, fam)


def tau_jacobian(
    a: np.ndarray,
    targets: TargetSet,
    fam: ExponentialFamily,
    beta: np.ndarray | None = None,
) -> np.ndarray:
    """Jacobian of tau at ``a``: a P-by-M matrix J with X' Gamma X J = X'."""
    if beta is None:
        beta, _ = tau(a, targets, fam)
    X = targets.covariates
    gamma = fam.variance(X @ beta)
    factor = _hessian_factor(X, gamma, None)
    return cho_solve(factor, X.T)


def population_estimand(
    true_means: np.ndarray, targets: TargetSet, fam: ExponentialFamily
) -> np.ndarray:
    """Coefficients of the best-approximating GLM at the exact target means."""
    beta, _ = tau(true_means, targets, fam)
    return beta
