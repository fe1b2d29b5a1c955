"""Exact Euclidean nearest-neighbor machinery.

Provides the row-stochastic k-NN averaging operator, the adaptive
neighbor-count recursion, and the self-nearest-neighbor map used by the
variance estimator.  All queries are exact; distance ties are broken
uniformly at random by a caller-supplied seeded generator so that results
are reproducible.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .data import TargetSet, TrainingSet

# below this many points a vectorized scan beats tree construction
BRUTE_FORCE_LIMIT = 64

# relative slack when collecting tie candidates around a k-th neighbor
# radius; covers ulp-level disagreement between tree and numpy arithmetic
_TIE_SLACK = 1e-9


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared distances via explicit differences (no dot trick)."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("mnd,mnd->mn", diff, diff)


def _as_points(points) -> np.ndarray:
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must form a 2-d array")
    return pts


class NeighborIndex:
    """Immutable exact k-nearest-neighbor index over a fixed point set.

    Small point sets are scanned directly; larger ones go through a k-d
    tree whose candidate sets are re-checked with exact squared distances,
    so both paths see identical tie sets.
    """

    def __init__(self, points):
        self.points = _as_points(points)
        n = self.points.shape[0]
        self._tree = cKDTree(self.points) if n >= BRUTE_FORCE_LIMIT else None

    def __len__(self) -> int:
        return self.points.shape[0]

    def kth_distance(self, queries, t: int) -> np.ndarray:
        """Distance from each query point to its t-th nearest indexed point."""
        q = _as_points(queries)
        n = len(self)
        if not 1 <= t <= n:
            raise ValueError(f"t={t} out of range for {n} points")
        if self._tree is None:
            sq = _sq_dists(q, self.points)
            return np.sqrt(np.partition(sq, t - 1, axis=1)[:, t - 1])
        dist, _ = self._tree.query(q, k=t)
        dist = np.asarray(dist, dtype=float).reshape(q.shape[0], -1)
        return np.ascontiguousarray(dist[:, -1])

    def _tie_rows(self, q: np.ndarray, k: int):
        """Yield (strict, ties) index arrays per query: strict neighbors are
        closer than the k-th squared distance, ties sit exactly on it."""
        n = len(self)
        if self._tree is None:
            sq = _sq_dists(q, self.points)
            for i in range(q.shape[0]):
                row = sq[i]
                kth = np.partition(row, k - 1)[k - 1]
                yield np.nonzero(row < kth)[0], np.nonzero(row == kth)[0]
            return
        dist, _ = self._tree.query(q, k=k)
        dist = np.asarray(dist, dtype=float).reshape(q.shape[0], -1)
        radius = dist[:, -1] * (1.0 + _TIE_SLACK)
        candidates = self._tree.query_ball_point(q, radius)
        for i in range(q.shape[0]):
            cand = np.asarray(candidates[i], dtype=np.int64)
            diff = self.points[cand] - q[i]
            sq = np.einsum("nd,nd->n", diff, diff)
            kth = np.partition(sq, k - 1)[k - 1]
            yield cand[sq < kth], cand[sq == kth]

    def knn_indices(self, queries, k: int, rng: np.random.Generator | None) -> np.ndarray:
        """Exact k nearest indices per query row, boundary ties randomized.

        With ``rng=None`` ties resolve to the lowest indices instead.  Each
        returned row is sorted ascending.
        """
        q = _as_points(queries)
        n = len(self)
        if not 1 <= k <= n:
            raise ValueError(f"k={k} out of range for {n} points")
        out = np.empty((q.shape[0], k), dtype=np.int64)
        for i, (strict, ties) in enumerate(self._tie_rows(q, k)):
            need = k - strict.size
            ties = np.sort(ties)
            if need == ties.size:
                chosen = ties
            elif rng is None:
                chosen = ties[:need]
            else:
                chosen = rng.choice(ties, size=need, replace=False)
            out[i] = np.sort(np.concatenate([strict, chosen]))
        return out

    def nearest_other(self, rng: np.random.Generator | None) -> np.ndarray:
        """Index of the nearest distinct-index point for every indexed point.

        Coincident points are each other's neighbors at distance zero; ties
        are broken uniformly at random when ``rng`` is given.
        """
        n = len(self)
        if n < 2:
            raise ValueError("need at least two points")
        pts = self.points
        if self._tree is None:
            sq = _sq_dists(pts, pts)
            np.fill_diagonal(sq, np.inf)
            best = sq.min(axis=1)
            out = np.empty(n, dtype=np.int64)
            for i in range(n):
                ties = np.nonzero(sq[i] == best[i])[0]
                out[i] = ties[0] if rng is None or ties.size == 1 else rng.choice(ties)
            return out
        kq = min(n, 4)
        dist, idx = self._tree.query(pts, k=kq)
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            others = dist[i][idx[i] != i]
            radius = others.min() * (1.0 + _TIE_SLACK)
            cand = np.asarray(self._tree.query_ball_point(pts[i], radius), dtype=np.int64)
            cand = cand[cand != i]
            diff = pts[cand] - pts[i]
            sq = np.einsum("nd,nd->n", diff, diff)
            ties = np.sort(cand[sq == sq.min()])
            out[i] = ties[0] if rng is None or ties.size == 1 else rng.choice(ties)
        return out


@dataclass(frozen=True)
class WeightMatrix:
    """Sparse row-stochastic k-NN averaging operator.

    Row m carries weight 1/k on the k training indices nearest to target m,
    stored as an (M, k) index array.
    """

    indices: np.ndarray
    n_train: int

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] < 1:
            raise ValueError("indices must be an (M, k) array")
        if idx.min() < 0 or idx.max() >= self.n_train:
            raise ValueError("neighbor index out of range")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def m(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Psi @ values: per-target mean of the k neighboring entries."""
        values = np.asarray(values, dtype=float)
        return values[self.indices].mean(axis=1)

    def apply_transpose(self, w: np.ndarray) -> np.ndarray:
        """Psi' @ w as a dense length-N vector."""
        w = np.asarray(w, dtype=float)
        out = np.zeros(self.n_train)
        np.add.at(out, self.indices.ravel(), np.repeat(w / self.k, self.k))
        return out

    def to_sparse(self):
        """CSR form of the full M-by-N matrix (for tests and diagnostics)."""
        from scipy.sparse import csr_matrix

        m, k = self.indices.shape
        data = np.full(m * k, 1.0 / k)
        indptr = np.arange(0, m * k + 1, k)
        return csr_matrix((data, self.indices.ravel(), indptr), shape=(m, self.n_train))


def build_weight_matrix(
    train: TrainingSet, targets: TargetSet, k: int, rng_seed
) -> WeightMatrix:
    """Construct the k-NN weight matrix with seeded random tie-breaking.

    ``rng_seed`` may be an integer seed or an existing Generator (a single
    generator is shared across all tie decisions of one fit).
    """
    if not 1 <= k <= train.n:
        raise ValueError(f"k={k} out of range for N={train.n} training points")
    rng = np.random.default_rng(rng_seed)
    index = NeighborIndex(train.locations)
    return WeightMatrix(index.knn_indices(targets.locations, k, rng), train.n)


def self_nn_map(train: TrainingSet, rng_seed) -> np.ndarray:
    """Index of each training point's nearest neighbor among the others."""
    if train.n < 2:
        raise ValueError("self-nearest-neighbor map needs N >= 2")
    rng = np.random.default_rng(rng_seed)
    return NeighborIndex(train.locations).nearest_other(rng)


def max_nn_radius(train_prefix, targets: TargetSet, t: int) -> float:
    """Largest distance from any target to its t-th nearest prefix point."""
    prefix = _as_points(train_prefix)
    if not 1 <= t <= prefix.shape[0]:
        raise ValueError(f"t={t} out of range for prefix of {prefix.shape[0]} points")
    return float(NeighborIndex(prefix).kth_distance(targets.locations, t).max())


# ---------------------------------------------------------------------------
# Adaptive neighbor-count selection
# ---------------------------------------------------------------------------


def _resolve_rule(a):
    """Turn a rule spec into (callable t -> a_t, label)."""
    if callable(a):
        return a, getattr(a, "__name__", "callable")
    if isinstance(a, str):
        if a == "invsqrt":
            return lambda t: 1.0 / math.sqrt(t), "invsqrt"
        raise ValueError(f"unknown rule token {a!r}; expected 'invsqrt'")
    seq = np.asarray(a, dtype=float)
    if seq.ndim != 1 or seq.size == 0:
        raise ValueError("rule sequence must be a non-empty 1-d array")
    if np.any(seq <= 0):
        raise ValueError("rule sequence must be positive")
    if np.any(np.diff(seq) > 0):
        raise ValueError("rule sequence must be nonincreasing")

    def from_seq(t: int) -> float:
        if t > seq.size:
            raise ValueError(f"rule sequence exhausted at t={t}")
        return float(seq[t - 1])

    return from_seq, "sequence"


def _rule_value(a_fn, t: int) -> float:
    val = float(a_fn(t))
    if not val > 0:
        raise ValueError(f"rule value a_{t}={val} must be positive")
    return val


def _target_distance_rows(train_locs: np.ndarray, target_locs: np.ndarray) -> np.ndarray:
    """(M, N) distances from each target to each training point, arrival order."""
    n = train_locs.shape[0]
    chunk = max(1, int(4e6) // max(n, 1))
    rows = [
        np.sqrt(_sq_dists(target_locs[i : i + chunk], train_locs))
        for i in range(0, target_locs.shape[0], chunk)
    ]
    return np.vstack(rows)


def _increment_times(dist_rows: np.ndarray, a_fn, n_total: int) -> np.ndarray:
    """1-based sample sizes at which the neighbor count steps up by one.

    Exploits monotonicity: for a fixed candidate count t, the t-th
    neighbor radius only shrinks as training points accumulate, so the
    recursion's first success for each t is the arrival position of the
    t-th training point inside the radius a_{t-1}, maximized over targets,
    and never earlier than one step after the previous increment.
    """
    m = dist_rows.shape[0]
    order = np.argsort(dist_rows, axis=1, kind="stable")
    sorted_d = np.take_along_axis(dist_rows, order, axis=1)
    times = []
    prev = 1
    t = 2
    while True:
        threshold = _rule_value(a_fn, t - 1)
        worst = prev + 1
        feasible = True
        for i in range(m):
            count = int(np.searchsorted(sorted_d[i], threshold, side="right"))
            if count < t:
                feasible = False
                break
            pos = int(np.partition(order[i, :count], t - 1)[t - 1]) + 1
            worst = max(worst, pos)
        if not feasible or worst > n_total:
            break
        times.append(worst)
        prev = worst
        t += 1
    return np.asarray(times, dtype=np.int64)


def _k_per_n(times: np.ndarray, n_total: int) -> np.ndarray:
    return 1 + np.searchsorted(times, np.arange(1, n_total + 1), side="right")


def _radius_trace(dist_rows: np.ndarray, k_per_n: np.ndarray) -> np.ndarray:
    """R_{N,k_N} for every N: running k-th order statistic, max over targets.

    Per target keeps a two-heap window (the current k smallest distances
    plus an overflow heap) so neighbor counts can grow mid-stream.
    """
    m, n = dist_rows.shape
    best = np.full(n, -np.inf)
    for i in range(m):
        row = dist_rows[i]
        low: list[float] = []  # negated max-heap of the k smallest so far
        high: list[float] = []  # min-heap of everything else
        for j in range(n):
            k = k_per_n[j]
            d = row[j]
            if len(low) < k:
                heapq.heappush(low, -d)
            elif d < -low[0]:
                heapq.heappush(high, -heapq.heappushpop(low, -d))
            else:
                heapq.heappush(high, d)
            while len(low) < k:
                heapq.heappush(low, -heapq.heappop(high))
            if -low[0] > best[j]:
                best[j] = -low[0]
    return best


@dataclass(frozen=True)
class KSelectionTrace:
    """Per-sample-size record of the adaptive neighbor-count recursion."""

    n: np.ndarray
    k: np.ndarray
    radius: np.ndarray
    rule: str

    def __post_init__(self):
        n = np.array(self.n, dtype=np.int64)
        k = np.array(self.k, dtype=np.int64)
        r = np.array(self.radius, dtype=float)
        if not (n.shape == k.shape == r.shape) or n.ndim != 1 or n.size == 0:
            raise ValueError("trace columns must be equal-length 1-d arrays")
        steps = np.diff(k)
        if k[0] != 1 or np.any(steps < 0) or np.any(steps > 1) or np.any(k > n):
            raise ValueError("invalid neighbor-count sequence")
        for arr in (n, k, r):
            arr.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "radius", r)

    @property
    def final_k(self) -> int:
        return int(self.k[-1])

    @property
    def final_radius(self) -> float:
        return float(self.radius[-1])

    def k_at(self, n: int) -> int:
        return int(self.k[n - 1])

    def radius_at(self, n: int) -> float:
        return float(self.radius[n - 1])

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("N,k,R\n")
            for n, k, r in zip(self.n, self.k, self.radius):
                fh.write(f"{n},{k},{format(r, '.17g')}\n")


def select_adaptive_k(
    train_locations_in_order, targets: TargetSet, a="invsqrt"
) -> KSelectionTrace:
    """Run the neighbor-count recursion over the full training sequence.

    Starts at one neighbor and steps the count up by one exactly when the
    grown neighborhood radius (max over targets of the distance to the
    candidate-count-th nearest training point seen so far) drops below the
    rule value at the current count.
    """
    train_locs = _as_points(train_locations_in_order)
    if train_locs.shape[0] == 0:
        raise ValueError("empty training sequence")
    a_fn, label = _resolve_rule(a)
    dist_rows = _target_distance_rows(train_locs, targets.locations)
    n_total = train_locs.shape[0]
    times = _increment_times(dist_rows, a_fn, n_total)
    k_per_n = _k_per_n(times, n_total)
    radius = _radius_trace(dist_rows, k_per_n)
    return KSelectionTrace(np.arange(1, n_total + 1), k_per_n, radius, label)


def adaptive_k_final(
    train_locations_in_order, targets: TargetSet, a="invsqrt"
) -> tuple[int, int, float]:
    """Fast path for fitting: (final k, number of increments, final radius).

    Shares the increment computation with ``select_adaptive_k`` but skips
    materializing the per-N radius column.
    """
    train_locs = _as_points(train_locations_in_order)
    if train_locs.shape[0] == 0:
        raise ValueError("empty training sequence")
    a_fn, _ = _resolve_rule(a)
    dist_rows = _target_distance_rows(train_locs, targets.locations)
    n_total = train_locs.shape[0]
    times = _increment_times(dist_rows, a_fn, n_total)
    k_final = 1 + times.size
    final_radius = float(
        np.partition(dist_rows, k_final - 1, axis=1)[:, k_final - 1].max()
    )
    return k_final, times.size, final_radius
