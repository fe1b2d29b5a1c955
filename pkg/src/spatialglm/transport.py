"""Exact 1-Wasserstein distances between discrete measures.

The Lipschitz bias-bound supremum reduces to the 1-Wasserstein distance
between the positive and negative parts of a signed measure supported on
target and training locations.  The primal is solved exactly by network
simplex; ``dual_check`` solves the Kantorovich-Rubinstein dual as an
independent linear program for verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ._simplex import transport_cost

MASS_RTOL = 1e-9
MERGE_TOL = 1e-12


class MassImbalanceError(ValueError):
    """Total masses differ beyond tolerance (or net signed mass is nonzero)."""


def _points_2d(points) -> np.ndarray:
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    if not np.all(np.isfinite(pts)):
        raise ValueError("support points must be finite")
    return pts


@dataclass(frozen=True)
class DiscreteMeasure:
    """Nonnegative masses on a list of support points (duplicates allowed)."""

    support: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        pts = _points_2d(self.support)
        mass = np.array(self.mass, dtype=float)
        if mass.ndim != 1 or mass.shape[0] != pts.shape[0]:
            raise ValueError("mass vector must match the support length")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0):
            raise ValueError("masses must be finite and nonnegative")
        pts.setflags(write=False)
        mass.setflags(write=False)
        object.__setattr__(self, "support", pts)
        object.__setattr__(self, "mass", mass)

    @property
    def total(self) -> float:
        return float(self.mass.sum())


@dataclass(frozen=True)
class SignedWeighting:
    """Real-valued weights attached to a list of points."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _points_2d(self.points)
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or w.shape[0] != pts.shape[0]:
            raise ValueError("weight vector must match the point list length")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)


def wasserstein1(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Exact 1-Wasserstein distance (Euclidean ground cost) via network simplex."""
    keep_a = a.mass > 0
    keep_b = b.mass > 0
    ma, mb = a.total, b.total
    if abs(ma - mb) > MASS_RTOL * max(ma, mb, 1.0):
        raise MassImbalanceError(
            f"total masses differ: {ma:.17g} vs {mb:.17g}"
        )
    if not keep_a.any() and not keep_b.any():
        return 0.0
    if a.support.shape[1] != b.support.shape[1]:
        raise ValueError("support dimensions differ")
    sa = a.support[keep_a]
    wa = a.mass[keep_a]
    sb = b.support[keep_b]
    # rescale the second measure so the kernel sees an exactly balanced pair
    wb = b.mass[keep_b] * (ma / mb)
    return transport_cost(wa, wb, cdist(sa, sb))


def _merge_coincident(points: np.ndarray, weights: np.ndarray):
    """Sum weights over coincident support points.

    Exact duplicates always merge; points within MERGE_TOL of each other
    merge when adjacent in lexicographic order (the structural case is exact
    duplicates, since weights land on stored coordinates).
    """
    uniq, inverse = np.unique(points, axis=0, return_inverse=True)
    sums = np.zeros(uniq.shape[0])
    np.add.at(sums, inverse.ravel(), weights)
    out_pts = []
    out_w = []
    i = 0
    while i < uniq.shape[0]:
        j = i + 1
        w = sums[i]
        while j < uniq.shape[0] and np.linalg.norm(uniq[j] - uniq[i]) <= MERGE_TOL:
            w += sums[j]
            j += 1
        out_pts.append(uniq[i])
        out_w.append(w)
        i = j
    return np.array(out_pts), np.array(out_w)


def lipschitz_supremum(sw_targets: SignedWeighting, sw_train: SignedWeighting) -> float:
    """sup over 1-Lipschitz f of |sum_m w_m f(s*_m) - sum_n v_n f(s_n)|.

    Forms the signed measure, merges coincident points, splits into positive
    and negative parts, and returns their 1-Wasserstein distance.  The two
    weight totals must agree (they do structurally when v = Psi' w and the
    weight-matrix rows sum to one).
    """
    st = float(sw_targets.weights.sum())
    sv = float(sw_train.weights.sum())
    if abs(st - sv) > MASS_RTOL * max(1.0, abs(st), abs(sv)):
        raise MassImbalanceError(
            f"net-mass imbalance between target and training weights: "
            f"{st:.17g} vs {sv:.17g}"
        )
    if sw_targets.points.shape[1] != sw_train.points.shape[1]:
        raise ValueError("point dimensions differ")
    pts = np.vstack([sw_targets.points, sw_train.points])
    wts = np.concatenate([sw_targets.weights, -sw_train.weights])
    keep = wts != 0.0
    pts, wts = pts[keep], wts[keep]
    if pts.shape[0] == 0:
        return 0.0
    pts, wts = _merge_coincident(pts, wts)
    pos = wts > 0
    neg = wts < 0
    if not pos.any() or not neg.any():
        # residual mass is at most the imbalance tolerance
        return 0.0
    return wasserstein1(
        DiscreteMeasure(pts[pos], wts[pos]),
        DiscreteMeasure(pts[neg], -wts[neg]),
    )


def dual_check(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Kantorovich-Rubinstein dual LP value (independent verification oracle).

    Maximizes sum_i mu_i f_i over potentials f on the union support subject
    to |f_i - f_j| <= d(p_i, p_j); must match ``wasserstein1`` to 1e-7
    relative on valid inputs.
    """
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix

    ma, mb = a.total, b.total
    if abs(ma - mb) > MASS_RTOL * max(ma, mb, 1.0):
        raise MassImbalanceError(f"total masses differ: {ma:.17g} vs {mb:.17g}")
    pts = np.vstack([a.support, b.support])
    mu = np.concatenate([a.mass, -b.mass])
    n = pts.shape[0]
    if n == 0 or not np.any(mu != 0.0):
        return 0.0
    dist = cdist(pts, pts)
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    rows = np.arange(ii.size)
    data = np.concatenate([np.ones(ii.size), -np.ones(ii.size)])
    A = coo_matrix(
        (data, (np.concatenate([rows, rows]), np.concatenate([ii, jj]))),
        shape=(ii.size, n),
    )
    bounds = [(None, None)] * n
    bounds[0] = (0.0, 0.0)  # pin one potential; objective is shift-invariant
    res = linprog(-mu, A_ub=A, b_ub=dist[ii, jj], bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"dual LP failed: {res.message}")
    return float(-res.fun)
