"""Training-data baselines: classic GLM, sandwich, and KDE-weighted intervals.

All three fit the GLM by maximum likelihood on the training data and differ
only in the standard errors (classic vs sandwich) or in importance weights
estimated from covariate densities (kde_weighted).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import glm
from .data import TargetSet, TrainingSet
from .families import ExponentialFamily
from .inference import normal_quantile

METHODS = ("classic", "sandwich", "kde_weighted")

KDE_GRID_SIZE = 20
KDE_GRID_SPAN = (0.01, 10.0)  # multiples of the Silverman bandwidth
KDE_DENSITY_FLOOR = 1e-12
KDE_CAP_PERCENTILE = 99.0


@dataclass(frozen=True)
class BaselineResult:
    method: str
    beta_hat: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    bandwidth_train: float | None = None
    bandwidth_target: float | None = None


def fit_training_mle(
    train: TrainingSet,
    fam: ExponentialFamily,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Maximize the (optionally weighted) training log-likelihood."""
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (train.n,) or np.any(weights < 0):
            raise ValueError("weights must be a nonnegative length-N vector")
    beta, _ = glm.maximize_glm(train.covariates, train.responses, fam, weights)
    return beta


def _information(train, fam, beta_hat, weights):
    X = train.covariates
    gamma = fam.variance(X @ beta_hat)
    g = gamma if weights is None else weights * gamma
    return (X * g[:, None]).T @ X


def classic_se(
    train: TrainingSet,
    fam: ExponentialFamily,
    beta_hat: np.ndarray,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Model-trusting standard errors from the observed Fisher information."""
    H = _information(train, fam, beta_hat, weights)
    if np.linalg.cond(H) > glm.CONDITION_LIMIT:
        raise glm.SingularHessianError("singular information matrix")
    cov = cho_solve(cho_factor(H), np.eye(H.shape[0]))
    return np.sqrt(np.diag(cov))


def sandwich_se(
    train: TrainingSet,
    fam: ExponentialFamily,
    beta_hat: np.ndarray,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Misspecification-robust standard errors H^{-1} M H^{-1}."""
    X = train.covariates
    H = _information(train, fam, beta_hat, weights)
    if np.linalg.cond(H) > glm.CONDITION_LIMIT:
        raise glm.SingularHessianError("singular information matrix")
    resid = train.responses - fam.mean(X @ beta_hat)
    w = np.ones(train.n) if weights is None else weights
    meat = (X * ((w * resid) ** 2)[:, None]).T @ X
    factor = cho_factor(H)
    inner = cho_solve(factor, meat)
    cov = cho_solve(factor, inner.T)
    return np.sqrt(np.diag(cov))


def _silverman_bandwidth(X: np.ndarray) -> float:
    n, p = X.shape
    sigma = math.sqrt(float(np.mean(np.var(X, axis=0, ddof=1)))) if n > 1 else 0.0
    if sigma <= 0.0:
        sigma = 1.0
    return sigma * (4.0 / ((p + 2) * n)) ** (1.0 / (p + 4))


def _gauss_log_kernel_sums(sq_dists: np.ndarray, h: float) -> np.ndarray:
    """log of sum_j exp(-d_ij^2 / 2h^2) per row, without the normalizer."""
    z = -sq_dists / (2.0 * h * h)
    zmax = z.max(axis=1)
    with np.errstate(divide="ignore"):
        return zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))


def _loo_cv_bandwidth(X: np.ndarray) -> float:
    """Bandwidth maximizing the leave-one-out log density over a log grid."""
    n, p = X.shape
    base = _silverman_bandwidth(X)
    grid = np.exp(
        np.linspace(math.log(KDE_GRID_SPAN[0]), math.log(KDE_GRID_SPAN[1]), KDE_GRID_SIZE)
    ) * base
    # keep the Silverman value itself on the grid so the rule-of-thumb
    # score can never beat the selected bandwidth
    grid[np.argmin(np.abs(np.log(grid) - math.log(base)))] = base
    if n == 1:
        return base
    diff = X[:, None, :] - X[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(sq, np.inf)  # leave-one-out: drop the self term
    best_h, best_score = grid[0], -np.inf
    for h in grid:
        log_sums = _gauss_log_kernel_sums(sq, h)
        norm = -math.log(n - 1) - 0.5 * p * math.log(2.0 * math.pi) - p * math.log(h)
        score = float(np.sum(log_sums + norm))
        if score > best_score:
            best_score, best_h = score, float(h)
    return best_h


def _kde_eval(fit_points: np.ndarray, h: float, eval_points: np.ndarray) -> np.ndarray:
    n, p = fit_points.shape
    diff = eval_points[:, None, :] - fit_points[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    log_sums = _gauss_log_kernel_sums(sq, h)
    norm = -math.log(n) - 0.5 * p * math.log(2.0 * math.pi) - p * math.log(h)
    return np.exp(log_sums + norm)


def kde_importance_weights(
    train: TrainingSet, targets: TargetSet, return_bandwidths: bool = False
):
    """Density-ratio weights p_target(X_i) / p_train(X_i) on covariates.

    Gaussian kernels with per-dataset leave-one-out CV bandwidths; near-zero
    denominators are floored and the affected weights capped at the 99th
    percentile of the unaffected ones.
    """
    h_s = _loo_cv_bandwidth(train.covariates)
    h_t = _loo_cv_bandwidth(targets.covariates)
    dens_t = _kde_eval(targets.covariates, h_t, train.covariates)
    dens_s = _kde_eval(train.covariates, h_s, train.covariates)
    floored = dens_s < KDE_DENSITY_FLOOR
    w = dens_t / np.maximum(dens_s, KDE_DENSITY_FLOOR)
    if floored.any():
        if floored.all():
            cap = 1.0
        else:
            cap = float(np.percentile(w[~floored], KDE_CAP_PERCENTILE))
        w[floored] = np.minimum(w[floored], cap)
    if not np.any(w > 0):
        raise ValueError("degenerate densities: all importance weights are zero")
    if return_bandwidths:
        return w, h_s, h_t
    return w


def baseline_interval(
    method: str,
    train: TrainingSet,
    targets: TargetSet,
    fam: ExponentialFamily,
    alpha: float,
) -> BaselineResult:
    """Fit one baseline and return symmetric z-intervals."""
    if method not in METHODS:
        raise ValueError(f"unknown baseline {method!r}; expected one of {METHODS}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    bw_train = bw_target = None
    if method == "kde_weighted":
        weights, bw_train, bw_target = kde_importance_weights(
            train, targets, return_bandwidths=True
        )
    else:
        weights = None
    beta = fit_training_mle(train, fam, weights)
    if method == "sandwich":
        se = sandwich_se(train, fam, beta, weights)
    else:
        se = classic_se(train, fam, beta, weights)
    z = normal_quantile(1.0 - alpha / 2.0)
    return BaselineResult(
        method=method,
        beta_hat=beta,
        se=se,
        lower=beta - z * se,
        upper=beta + z * se,
        alpha=alpha,
        bandwidth_train=bw_train,
        bandwidth_target=bw_target,
    )
