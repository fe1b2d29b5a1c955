"""End-to-end conservative inference pipeline.

Combines the nearest-neighbor mean estimate, the weighted ML point estimate
and its Jacobian, the heteroskedastic nearest-neighbor variance estimate,
and the Lipschitz bias bound into per-coefficient confidence intervals

    beta_hat_p  +/-  ( z_{alpha/2} * sigma_hat_p + L * W1-supremum_p ).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import glm
from .data import TargetSet, TrainingSet
from .families import ExponentialFamily
from .neighbors import (
    KSelectionTrace,
    WeightMatrix,
    adaptive_k_final,
    build_weight_matrix,
    self_nn_map,
)
from .transport import SignedWeighting, lipschitz_supremum

# Acklam's rational approximation of the inverse normal CDF
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF, accurate to well below 1e-10.

    Rational approximation refined with one Halley step through erfc.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile argument must be in (0, 1), got {p}")
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        z = ((((( _C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5]) / \
            (((( _D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1.0)
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        z = ((((( _A[0]*r + _A[1])*r + _A[2])*r + _A[3])*r + _A[4])*r + _A[5])*q / \
            ((((( _B[0]*r + _B[1])*r + _B[2])*r + _B[3])*r + _B[4])*r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        z = -((((( _C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5]) / \
            (((( _D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1.0)
    # one Halley refinement: e = Phi(z) - p
    e = 0.5 * math.erfc(-z / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(z * z / 2.0)
    return z - u / (1.0 + z * u / 2.0)


def variance_diag(train: TrainingSet, nn: np.ndarray) -> np.ndarray:
    """Half squared response gaps to each point's nearest neighbor."""
    if train.n < 2:
        raise ValueError("variance estimate needs N >= 2")
    nn = np.asarray(nn, dtype=np.int64)
    y = train.responses
    return 0.5 * (y - y[nn]) ** 2


def sigma_hat(
    targets: TargetSet,
    psi: WeightMatrix,
    lambda_diag: np.ndarray,
    jac: np.ndarray,
    check: bool | None = None,
) -> np.ndarray:
    """Per-coefficient standard errors ||Lambda^{1/2} Psi' J' e_p||_2.

    With ``check`` enabled (default: debug builds) the equivalent quadratic
    form e_p' J Psi Lambda Psi' J' e_p is evaluated through the assembled
    sparse operator and must agree to 1e-12 relative.
    """
    lam = np.asarray(lambda_diag, dtype=float)
    if np.any(lam < 0):
        raise ValueError("variance diagonal must be nonnegative")
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    out = np.empty(jac.shape[0])
    for p in range(jac.shape[0]):
        q = psi.apply_transpose(jac[p])
        out[p] = math.sqrt(float(np.sum(lam * q * q)))
    if check is None:
        check = __debug__
    if check:
        sp = psi.to_sparse()
        mid = (sp.multiply(lam[None, :]) @ sp.T).toarray()
        quad = np.einsum("pm,mn,pn->p", jac, mid, jac)
        ref = np.sqrt(np.maximum(quad, 0.0))
        if not np.allclose(out, ref, rtol=1e-12, atol=1e-300):
            raise AssertionError("sigma_hat norm and quadratic forms disagree")
    return out


def bias_bound(
    targets: TargetSet,
    train: TrainingSet,
    psi: WeightMatrix,
    jac: np.ndarray,
    L: float,
    p: int,
) -> float:
    """Worst-case bias L * sup_{Lip1} |sum w f(s*) - sum v f(s)| for coefficient p.

    The target weights are the p-th row of the Jacobian; the training weights
    are their image under Psi', so the two totals balance structurally.
    """
    if L < 0:
        raise ValueError("Lipschitz constant must be nonnegative")
    if L == 0.0:
        return 0.0
    w = np.asarray(jac, dtype=float)[p]
    v = psi.apply_transpose(w)
    sup = lipschitz_supremum(
        SignedWeighting(targets.locations, w),
        SignedWeighting(train.locations, v),
    )
    return L * sup


@dataclass(frozen=True)
class KTraceSummary:
    final_k: int
    increments: int
    final_radius: float


@dataclass(frozen=True)
class InferenceResult:
    """Point estimates, uncertainty components, and intervals for one fit."""

    beta_hat: np.ndarray
    sigma_hat: np.ndarray
    bias_bound: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    lipschitz: float
    k_used: int
    seed: int
    solve: glm.SolveReport
    k_trace: KTraceSummary | None

    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)


class FitStageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names the failing component."""

    def __init__(self, stage: str, original: Exception):
        super().__init__(f"stage {stage}: {original}")
        self.stage = stage
        self.original = original


def fit(
    train: TrainingSet,
    targets: TargetSet,
    fam: ExponentialFamily,
    L: float,
    alpha: float,
    k_policy: int | str = "adaptive",
    a_rule="invsqrt",
    seed: int = 0,
) -> InferenceResult:
    """Run the full pipeline and return conservative confidence intervals.

    ``k_policy`` is either the string ``"adaptive"`` (neighbor count chosen
    by the recursion with rule ``a_rule``) or a fixed integer neighbor
    count.  A single generator seeded by ``seed`` drives every random tie
    break, so identical inputs and seed give bit-identical results.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if L < 0:
        raise ValueError("Lipschitz constant must be nonnegative")
    rng = np.random.default_rng(seed)

    trace_summary = None
    if isinstance(k_policy, str):
        if k_policy != "adaptive":
            raise ValueError(f"unknown k policy {k_policy!r}")
        try:
            k_used, n_inc, final_r = adaptive_k_final(train.locations, targets, a_rule)
        except Exception as exc:  # pragma: no cover - defensive
            raise FitStageError("select_adaptive_k", exc) from exc
        trace_summary = KTraceSummary(k_used, n_inc, final_r)
    else:
        k_used = int(k_policy)

    try:
        psi = build_weight_matrix(train, targets, k_used, rng)
    except Exception as exc:
        raise FitStageError("build_weight_matrix", exc) from exc
    a_hat = psi.apply(train.responses)

    try:
        beta, report = glm.tau(a_hat, targets, fam)
    except Exception as exc:
        raise FitStageError("tau", exc) from exc
    try:
        jac = glm.tau_jacobian(a_hat, targets, fam, beta=beta)
    except Exception as exc:
        raise FitStageError("tau_jacobian", exc) from exc

    try:
        nn = self_nn_map(train, rng)
        lam = variance_diag(train, nn)
    except Exception as exc:
        raise FitStageError("variance_diag", exc) from exc
    sigma = sigma_hat(targets, psi, lam, jac)

    n_coef = beta.shape[0]
    bounds = np.empty(n_coef)
    try:
        for p in range(n_coef):
            bounds[p] = bias_bound(targets, train, psi, jac, L, p)
    except Exception as exc:
        raise FitStageError("bias_bound", exc) from exc

    z = normal_quantile(1.0 - alpha / 2.0)
    half = z * sigma + bounds
    return InferenceResult(
        beta_hat=beta,
        sigma_hat=sigma,
        bias_bound=bounds,
        lower=beta - half,
        upper=beta + half,
        alpha=alpha,
        lipschitz=L,
        k_used=k_used,
        seed=seed,
        solve=report,
        k_trace=trace_summary,
    )


def write_result(path, result: InferenceResult) -> None:
    """Serialize a result to the documented flat key-value text format."""
    lines = [
        f"alpha = {format(result.alpha, '.17g')}",
        f"lipschitz = {format(result.lipschitz, '.17g')}",
        f"k_used = {result.k_used}",
        f"seed = {result.seed}",
        f"converged = {str(result.solve.converged).lower()}",
        f"iterations = {result.solve.iterations}",
    ]
    for p in range(result.beta_hat.shape[0]):
        i = p + 1
        lines.append(f"beta_hat.{i} = {format(result.beta_hat[p], '.17g')}")
        lines.append(f"sigma_hat.{i} = {format(result.sigma_hat[p], '.17g')}")
        lines.append(f"bias_bound.{i} = {format(result.bias_bound[p], '.17g')}")
        lines.append(f"lower.{i} = {format(result.lower[p], '.17g')}")
        lines.append(f"upper.{i} = {format(result.upper[p], '.17g')}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_result_fields(path) -> dict[str, str]:
    """Parse the key-value result document back into a string map."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition(" = ")
            if not value:
                raise ValueError(f"malformed result line: {line!r}")
            out[key] = value
    return out
