import math

import mpmath
import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from spatialglm.data import TargetSet, TrainingSet
from spatialglm.families import BERNOULLI, GAUSSIAN
from spatialglm.glm import tau, tau_jacobian
from spatialglm.inference import (
    FitStageError,
    bias_bound,
    fit,
    normal_quantile,
    read_result_fields,
    sigma_hat,
    variance_diag,
    write_result,
)
from spatialglm.neighbors import WeightMatrix, build_weight_matrix, self_nn_map


def train_on_line(xs, ys):
    xs = np.asarray(xs, dtype=float).reshape(-1, 1)
    return TrainingSet(xs, xs, np.asarray(ys, dtype=float))


# ---------------------------------------------------------------------------
# normal quantile
# ---------------------------------------------------------------------------


def test_normal_quantile_reference_points():
    with mpmath.workdps(40):
        ref975 = float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf("0.975") - 1))
        ref9 = float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf("0.9") - 1))
        ref_small = float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf("0.001") - 1))
    assert abs(normal_quantile(0.975) - ref975) < 1e-10
    assert abs(normal_quantile(0.975) - 1.959963984540054) < 1e-10
    assert abs(normal_quantile(0.9) - ref9) < 1e-10
    assert abs(normal_quantile(0.001) - ref_small) < 1e-10
    assert normal_quantile(0.5) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        normal_quantile(0.0)
    with pytest.raises(ValueError):
        normal_quantile(1.0)


# ---------------------------------------------------------------------------
# variance diagonal
# ---------------------------------------------------------------------------


def test_variance_diag_constant_responses_zero():
    train = train_on_line([0.0, 0.5, 2.0], [3.0, 3.0, 3.0])
    nn = self_nn_map(train, rng_seed=0)
    assert np.array_equal(variance_diag(train, nn), np.zeros(3))


def test_variance_diag_two_points():
    train = train_on_line([0.0, 1.0], [0.0, 1.0])
    nn = self_nn_map(train, rng_seed=0)
    assert np.array_equal(variance_diag(train, nn), [0.5, 0.5])


def test_variance_diag_hand_replay_line():
    # brute-force nearest-neighbor map for points (0, 1, 3, 7):
    # zeta = (1, 0, 1, 2); entries are half squared response gaps
    train = train_on_line([0.0, 1.0, 3.0, 7.0], [1.0, 0.0, 2.0, 5.0])
    nn = self_nn_map(train, rng_seed=0)
    assert np.array_equal(nn, [1, 0, 1, 2])
    lam = variance_diag(train, nn)
    expected = 0.5 * np.array([(1 - 0) ** 2, (0 - 1) ** 2, (2 - 0) ** 2, (5 - 2) ** 2])
    assert np.array_equal(lam, expected)


def test_variance_diag_matches_brute_force_zeta():
    rng = np.random.default_rng(44)
    locs = rng.random((120, 2))
    ys = rng.normal(size=120)
    train = TrainingSet(locs, locs[:, :1], ys)
    nn = self_nn_map(train, rng_seed=1)
    sq = ((locs[:, None, :] - locs[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(sq, np.inf)
    zeta = np.argmin(sq, axis=1)
    assert np.array_equal(nn, zeta)
    assert np.array_equal(variance_diag(train, nn), 0.5 * (ys - ys[zeta]) ** 2)


# ---------------------------------------------------------------------------
# sigma_hat
# ---------------------------------------------------------------------------


def test_sigma_hat_zero_variance():
    psi = WeightMatrix(np.array([[0], [1]]), n_train=3)
    targets = TargetSet(np.array([[0.0], [1.0]]), np.array([[1.0], [-1.0]]))
    out = sigma_hat(targets, psi, np.zeros(3), np.ones((1, 2)))
    assert np.array_equal(out, [0.0])


def test_sigma_hat_single_term():
    # M=1, P=1, k=1: sigma = |j11| * sqrt(lambda_j)
    psi = WeightMatrix(np.array([[2]]), n_train=4)
    targets = TargetSet(np.array([[0.0]]), np.array([[1.0]]))
    lam = np.array([0.0, 0.0, 2.25, 0.0])
    jac = np.array([[-3.0]])
    out = sigma_hat(targets, psi, lam, jac)
    assert out[0] == pytest.approx(3.0 * 1.5, rel=1e-15)


def test_sigma_hat_norm_and_quadratic_forms_agree():
    rng = np.random.default_rng(10)
    for _ in range(10):
        n, m, p, k = 40, 6, 2, 5
        idx = np.array([rng.choice(n, size=k, replace=False) for _ in range(m)])
        psi = WeightMatrix(idx, n_train=n)
        targets = TargetSet(rng.normal(size=(m, 2)), rng.normal(size=(m, p)))
        lam = rng.random(n)
        jac = rng.normal(size=(p, m))
        # check=True raises if the two forms differ beyond 1e-12 relative
        out = sigma_hat(targets, psi, lam, jac, check=True)
        assert np.all(out >= 0)


# ---------------------------------------------------------------------------
# bias bound
# ---------------------------------------------------------------------------


def make_fit_pieces(seed, n=10, m=3, k=2):
    rng = np.random.default_rng(seed)
    locs = rng.uniform(-1, 1, size=(n, 2))
    train = TrainingSet(locs, locs[:, :1], rng.normal(size=n))
    tlocs = rng.uniform(-0.5, 0.5, size=(m, 2))
    targets = TargetSet(tlocs, rng.normal(size=(m, 1)))
    psi = build_weight_matrix(train, targets, k, rng_seed=seed)
    jac = rng.normal(size=(1, m))
    return train, targets, psi, jac


def test_bias_bound_zero_lipschitz():
    train, targets, psi, jac = make_fit_pieces(0)
    assert bias_bound(targets, train, psi, jac, L=0.0, p=0) == 0.0


def test_bias_bound_coincident_targets_zero():
    # each target coincides with its single neighbor
    locs = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    train = TrainingSet(locs, locs[:, :1], np.zeros(3))
    targets = TargetSet(locs, np.array([[1.0], [2.0], [3.0]]))
    psi = build_weight_matrix(train, targets, 1, rng_seed=0)
    jac = np.array([[0.3, -1.2, 0.4]])
    assert bias_bound(targets, train, psi, jac, L=2.0, p=0) == 0.0


def test_bias_bound_matches_dual_lp_oracle():
    train, targets, psi, jac = make_fit_pieces(5, n=10, m=3, k=2)
    L = 0.7
    got = bias_bound(targets, train, psi, jac, L, p=0)

    w = jac[0]
    v = psi.apply_transpose(w)
    pts = np.vstack([targets.locations, train.locations])
    mu = np.concatenate([w, -v])
    keep = mu != 0.0
    pts, mu = pts[keep], mu[keep]
    dist = cdist(pts, pts)
    nn = len(pts)
    ii, jj = np.nonzero(~np.eye(nn, dtype=bool))
    A = np.zeros((ii.size, nn))
    A[np.arange(ii.size), ii] = 1.0
    A[np.arange(ii.size), jj] = -1.0
    bounds = [(None, None)] * nn
    bounds[0] = (0.0, 0.0)
    res = linprog(-mu, A_ub=A, b_ub=dist[ii, jj], bounds=bounds, method="highs")
    assert res.success
    assert got == pytest.approx(L * (-res.fun), rel=1e-7)


def test_bias_bound_linear_in_lipschitz():
    train, targets, psi, jac = make_fit_pieces(9)
    b1 = bias_bound(targets, train, psi, jac, 0.5, p=0)
    b2 = bias_bound(targets, train, psi, jac, 1.0, p=0)
    assert b2 == pytest.approx(2.0 * b1, rel=1e-12)
    assert b1 >= 0.0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def test_fit_noiseless_linear_gaussian_recovers_slope():
    xs = np.linspace(-1.0, 1.0, 801)
    train = train_on_line(xs, xs)  # f(s) = s observed without noise
    targets = TargetSet(
        np.linspace(-0.4, 0.4, 9).reshape(-1, 1),
        np.linspace(-0.4, 0.4, 9).reshape(-1, 1),
    )
    res = fit(train, targets, GAUSSIAN, L=1.0, alpha=0.05, seed=0)
    assert res.beta_hat[0] == pytest.approx(1.0, abs=0.02)
    assert res.lower[0] <= 1.0 <= res.upper[0]
    # only smoothness gaps feed the variance estimate here, no noise
    assert res.sigma_hat[0] < 1e-3


def test_fit_alpha_monotonicity():
    rng = np.random.default_rng(2)
    locs = rng.uniform(-1, 1, size=(300, 2))
    train = TrainingSet(locs, locs[:, :1], (rng.random(300) < 0.6).astype(float))
    targets = TargetSet(rng.uniform(-0.5, 0.5, size=(8, 2)), rng.normal(size=(8, 1)))
    wide = fit(train, targets, BERNOULLI, L=0.25, alpha=0.05, seed=3)
    narrow = fit(train, targets, BERNOULLI, L=0.25, alpha=0.5, seed=3)
    assert np.all(narrow.upper - narrow.lower < wide.upper - wide.lower)
    assert np.allclose(narrow.beta_hat, wide.beta_hat)


def test_fit_interval_shape_and_half_width_identity():
    rng = np.random.default_rng(6)
    locs = rng.uniform(-1, 1, size=(200, 2))
    train = TrainingSet(locs, locs[:, :1], (rng.random(200) < 0.5).astype(float))
    targets = TargetSet(rng.uniform(-0.5, 0.5, size=(5, 2)), rng.normal(size=(5, 1)))
    res = fit(train, targets, BERNOULLI, L=0.3, alpha=0.1, seed=1)
    z = normal_quantile(1.0 - 0.1 / 2.0)
    half = z * res.sigma_hat + res.bias_bound
    assert np.array_equal(res.upper, res.beta_hat + half)
    assert np.array_equal(res.lower, res.beta_hat - half)
    assert np.all(res.bias_bound >= 0)
    assert np.all(res.lower <= res.beta_hat) and np.all(res.beta_hat <= res.upper)


def test_fit_deterministic_given_seed():
    rng = np.random.default_rng(14)
    locs = rng.uniform(-1, 1, size=(150, 2))
    train = TrainingSet(locs, locs[:, :1], (rng.random(150) < 0.4).astype(float))
    targets = TargetSet(rng.uniform(-0.4, 0.4, size=(6, 2)), rng.normal(size=(6, 1)))
    r1 = fit(train, targets, BERNOULLI, L=0.25, alpha=0.05, seed=7)
    r2 = fit(train, targets, BERNOULLI, L=0.25, alpha=0.05, seed=7)
    for field in ("beta_hat", "sigma_hat", "bias_bound", "lower", "upper"):
        assert np.array_equal(getattr(r1, field), getattr(r2, field))
    assert r1.k_used == r2.k_used


def test_fit_fixed_k_policy():
    rng = np.random.default_rng(20)
    locs = rng.uniform(-1, 1, size=(100, 2))
    train = TrainingSet(locs, locs[:, :1], (rng.random(100) < 0.5).astype(float))
    targets = TargetSet(rng.uniform(-0.4, 0.4, size=(4, 2)), rng.normal(size=(4, 1)))
    res = fit(train, targets, BERNOULLI, L=0.25, alpha=0.05, k_policy=5, seed=0)
    assert res.k_used == 5
    assert res.k_trace is None


def test_fit_stage_error_names_tau():
    # k=1 with separated binary responses puts the neighbor means on the
    # domain boundary and the weighted MLE does not exist
    train = train_on_line([0.9, -0.9, 0.8, -0.8], [1.0, 0.0, 1.0, 0.0])
    targets = TargetSet(np.array([[0.85], [-0.85]]), np.array([[1.0], [-1.0]]))
    with pytest.raises(FitStageError) as err:
        fit(train, targets, BERNOULLI, L=0.25, alpha=0.05, k_policy=1, seed=0)
    assert err.value.stage == "tau"


def test_fit_rejects_bad_alpha_and_l():
    train = train_on_line([0.0, 1.0], [0.0, 1.0])
    targets = TargetSet(np.array([[0.5]]), np.array([[1.0]]))
    with pytest.raises(ValueError):
        fit(train, targets, GAUSSIAN, L=1.0, alpha=1.5)
    with pytest.raises(ValueError):
        fit(train, targets, GAUSSIAN, L=-1.0, alpha=0.05)
    with pytest.raises(ValueError):
        fit(train, targets, GAUSSIAN, L=1.0, alpha=0.05, k_policy="adaptivex")


def test_result_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    locs = rng.uniform(-1, 1, size=(120, 2))
    train = TrainingSet(locs, locs[:, :1], (rng.random(120) < 0.5).astype(float))
    targets = TargetSet(rng.uniform(-0.4, 0.4, size=(5, 2)), rng.normal(size=(5, 1)))
    res = fit(train, targets, BERNOULLI, L=0.25, alpha=0.05, seed=2)
    path = tmp_path / "result.txt"
    write_result(path, res)
    fields = read_result_fields(path)
    assert float(fields["alpha"]) == 0.05
    assert int(fields["k_used"]) == res.k_used
    assert float(fields["beta_hat.1"]) == res.beta_hat[0]
    assert float(fields["lower.1"]) == res.lower[0]
    assert float(fields["upper.1"]) == res.upper[0]
    assert float(fields["bias_bound.1"]) == res.bias_bound[0]


def test_variance_consistency_surrogate_single_seed():
    # finite-sample surrogate: k * Psi Lambda Psi' approaches the true
    # conditional variance at the targets as the design fills in
    from spatialglm.simulation import gen_infill

    def mad(n):
        train, targets, truth = gen_infill(0.25, n, 50, seed=123)
        from spatialglm.neighbors import adaptive_k_final

        k, _, _ = adaptive_k_final(train.locations, targets)
        psi = build_weight_matrix(train, targets, k, rng_seed=1)
        lam = variance_diag(train, self_nn_map(train, rng_seed=1))
        sp = psi.to_sparse()
        mat = (sp.multiply(lam[None, :]) @ sp.T).toarray() * k
        p = truth(targets.locations)
        true_var = p * (1.0 - p)
        return float(np.mean(np.abs(np.diag(mat) - true_var))), mat

    mad_small, _ = mad(1000)
    mad_large, mat_large = mad(10000)
    assert mad_large < mad_small
    # off-diagonals vanish once neighborhoods are disjoint
    off = mat_large - np.diag(np.diag(mat_large))
    assert np.max(np.abs(off)) == 0.0
