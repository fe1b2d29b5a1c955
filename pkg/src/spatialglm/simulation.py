"""Simulation designs, evaluation metrics, and the replication harness.

Two logistic designs share the same training distribution (uniform on the
square) and differ in where targets live: inside a shrinking sub-square
(infill) or shifted off the right edge (extrapolation).  A third design is
the linear-model inconsistency counterexample with two fixed targets.  Each
replicate recomputes its own estimand from the exact conditional means at
that replicate's sampled targets.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial

import numpy as np
from scipy.special import expit

from .baselines import METHODS as BASELINE_METHODS
from .baselines import baseline_interval
from .data import TargetSet, TrainingSet
from .families import BERNOULLI, GAUSSIAN, ExponentialFamily
from .glm import population_estimand
from .inference import fit

DESIGNS = ("infill", "extrapolation", "counterexample")


def _h_infill(x: np.ndarray) -> np.ndarray:
    # piecewise slopes as printed; the jump at -0.125 is part of the design
    return np.where(x < -0.125, x, np.where(x < 0.125, 0.875 - x, 0.625 + x))


def _h_extrapolation(x: np.ndarray) -> np.ndarray:
    return np.where(x < 0.875, x, 0.875 - x)


def infill_mean(locations: np.ndarray) -> np.ndarray:
    """Conditional response mean at locations (first coordinate drives it)."""
    locations = np.atleast_2d(locations)
    return expit(_h_infill(locations[:, 0]))


def extrapolation_mean(locations: np.ndarray) -> np.ndarray:
    locations = np.atleast_2d(locations)
    return expit(_h_extrapolation(locations[:, 0]))


def counterexample_mean(locations: np.ndarray) -> np.ndarray:
    locations = np.atleast_2d(locations)
    return locations[:, 0] ** 2


def gen_infill(scale: float, n_train: int, n_target: int, seed: int):
    """Bernoulli design with targets uniform on [-scale, scale]^2."""
    if not 0.0 < scale <= 1.0:
        raise ValueError(f"scale must lie in (0, 1], got {scale}")
    rng = np.random.default_rng(seed)
    train_locs = rng.uniform(-1.0, 1.0, size=(n_train, 2))
    target_locs = rng.uniform(-scale, scale, size=(n_target, 2))
    means = infill_mean(train_locs)
    y = (rng.random(n_train) < means).astype(float)
    train = TrainingSet(train_locs, train_locs[:, :1], y)
    targets = TargetSet(target_locs, target_locs[:, :1])
    return train, targets, infill_mean


def gen_extrapolation(shift: float, n_train: int, n_target: int, seed: int):
    """Bernoulli design with targets on [1-shift, 1+shift] x [-1, 1]."""
    if shift <= 0.0:
        raise ValueError(f"shift must be positive, got {shift}")
    rng = np.random.default_rng(seed)
    train_locs = rng.uniform(-1.0, 1.0, size=(n_train, 2))
    tx = rng.uniform(1.0 - shift, 1.0 + shift, size=n_target)
    ty = rng.uniform(-1.0, 1.0, size=n_target)
    target_locs = np.column_stack([tx, ty])
    means = extrapolation_mean(train_locs)
    y = (rng.random(n_train) < means).astype(float)
    train = TrainingSet(train_locs, train_locs[:, :1], y)
    targets = TargetSet(target_locs, target_locs[:, :1])
    return train, targets, extrapolation_mean


def gen_counterexample(n_train: int, seed: int):
    """Quadratic truth, linear no-intercept model, unit Gaussian noise."""
    rng = np.random.default_rng(seed)
    s = rng.uniform(-0.75, 1.0, size=(n_train, 1))
    y = s[:, 0] ** 2 + rng.standard_normal(n_train)
    train = TrainingSet(s, s, y)
    target_locs = np.array([[0.5], [-0.5]])
    targets = TargetSet(target_locs, target_locs)
    return train, targets, counterexample_mean


def _on_sixteenths(value: float, i_max: int) -> bool:
    scaled = value * 16.0
    i = round(scaled)
    return abs(scaled - i) < 1e-9 and 1 <= i <= i_max


@dataclass(frozen=True)
class SimConfig:
    """One simulation study: a design, its parameter, sizes, and methods."""

    design: str
    scale: float = 0.25
    shift: float = 0.25
    n_train: int = 2000
    n_target: int = 100
    n_replicates: int = 100
    seed_base: int = 0
    methods: tuple[str, ...] = ("ours",)
    alpha: float = 0.05
    lipschitz: float = 0.25
    k_policy: int | str = "adaptive"
    coef_index: int = 0
    custom: bool = False

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}; expected {DESIGNS}")
        for name, v in (
            ("n_train", self.n_train),
            ("n_target", self.n_target),
            ("n_replicates", self.n_replicates),
        ):
            if v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.lipschitz < 0:
            raise ValueError("lipschitz must be nonnegative")
        if not self.custom:
            if self.design == "infill" and not _on_sixteenths(self.scale, 16):
                raise ValueError(
                    "paper-faithful infill scales are i/16 for i=1..16; "
                    "set custom=True for other values"
                )
            if self.design == "extrapolation" and not _on_sixteenths(self.shift, 8):
                raise ValueError(
                    "paper-faithful extrapolation shifts are i/16 for i=1..8; "
                    "set custom=True for other values"
                )
        object.__setattr__(self, "methods", tuple(self.methods))


def family_for_design(design: str) -> ExponentialFamily:
    return GAUSSIAN if design == "counterexample" else BERNOULLI


def generate_dataset(cfg: SimConfig, seed: int):
    if cfg.design == "infill":
        return gen_infill(cfg.scale, cfg.n_train, cfg.n_target, seed)
    if cfg.design == "extrapolation":
        return gen_extrapolation(cfg.shift, cfg.n_train, cfg.n_target, seed)
    return gen_counterexample(cfg.n_train, seed)


@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    method: str
    beta_true: float
    lower: float
    upper: float
    covered: bool
    width: float
    sign_fp: bool
    sign_tp: bool
    failed: bool


def classify_interval(lower: float, upper: float, beta_true: float):
    """(covered, width, sign_fp, sign_tp) for one interval against the truth."""
    covered = lower <= beta_true <= upper
    width = upper - lower
    excludes_zero = lower > 0.0 or upper < 0.0
    side = 1 if lower > 0.0 else (-1 if upper < 0.0 else 0)
    true_side = int(np.sign(beta_true))
    sign_fp = excludes_zero and side != true_side
    sign_tp = excludes_zero and side == true_side
    return covered, width, sign_fp, sign_tp


def _method_ours(train, targets, fam, cfg: SimConfig, seed: int):
    res = fit(
        train,
        targets,
        fam,
        cfg.lipschitz,
        cfg.alpha,
        k_policy=cfg.k_policy,
        seed=seed,
    )
    p = cfg.coef_index
    return float(res.lower[p]), float(res.upper[p])


def _method_baseline(name, train, targets, fam, cfg: SimConfig, seed: int):
    res = baseline_interval(name, train, targets, fam, cfg.alpha)
    p = cfg.coef_index
    return float(res.lower[p]), float(res.upper[p])


def builtin_methods() -> dict:
    out = {"ours": _method_ours}
    for name in BASELINE_METHODS:
        out[name] = partial(_method_baseline, name)
    return out


def _replicate_records(cfg: SimConfig, methods_map: dict, r: int):
    seed = cfg.seed_base + r
    train, targets, truth = generate_dataset(cfg, seed)
    fam = family_for_design(cfg.design)
    try:
        beta_true = float(
            population_estimand(truth(targets.locations), targets, fam)[cfg.coef_index]
        )
    except Exception:
        # without a ground truth none of this replicate's rows are scorable
        return [
            ReplicateRecord(
                r, name, math.nan, math.nan, math.nan, False, math.nan, False, False, True
            )
            for name in cfg.methods
        ]
    records = []
    for name in cfg.methods:
        try:
            lower, upper = methods_map[name](train, targets, fam, cfg, seed)
            covered, width, fp, tp = classify_interval(lower, upper, beta_true)
            records.append(
                ReplicateRecord(r, name, beta_true, lower, upper, covered, width, fp, tp, False)
            )
        except Exception:
            records.append(
                ReplicateRecord(
                    r, name, beta_true, math.nan, math.nan, False, math.nan, False, False, True
                )
            )
    return records


def run_study(cfg: SimConfig, methods: dict | None = None, jobs: int = 1):
    """Run all replicates and return records in (replicate, method) order.

    Replicate r uses seed ``seed_base + r`` for both data generation and
    tie-breaking, so results do not depend on the execution schedule;
    ``jobs > 1`` fans replicates out to worker processes.
    """
    methods_map = builtin_methods()
    if methods:
        methods_map.update(methods)
    for name in cfg.methods:
        if name not in methods_map:
            raise ValueError(f"unknown method {name!r}")
    worker = partial(_replicate_records, cfg, methods_map)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(worker, range(cfg.n_replicates)))
    else:
        chunks = [worker(r) for r in range(cfg.n_replicates)]
    return [rec for chunk in chunks for rec in chunk]


@dataclass(frozen=True)
class MethodSummary:
    method: str
    coverage: float
    mean_width: float
    fp_prop: float
    tp_prop: float
    n_effective: int
    failed: int


def summarize(records, method_order=None) -> list[MethodSummary]:
    """Per-method coverage, width, and sign-decision proportions."""
    if method_order is None:
        seen = []
        for rec in records:
            if rec.method not in seen:
                seen.append(rec.method)
        method_order = seen
    out = []
    for name in method_order:
        rows = [r for r in records if r.method == name]
        ok = [r for r in rows if not r.failed]
        n = len(ok)
        if n == 0:
            out.append(MethodSummary(name, math.nan, math.nan, math.nan, math.nan, 0, len(rows)))
            continue
        coverage = sum(r.covered for r in ok) / n
        mean_width = sum(r.width for r in ok) / n
        fp = sum(r.sign_fp for r in ok) / n
        tp = sum(r.sign_tp for r in ok) / n
        out.append(MethodSummary(name, coverage, mean_width, fp, tp, n, len(rows) - n))
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["replicate", "method", "beta_true", "lower", "upper",
             "covered", "width", "sign_fp", "sign_tp", "failed"]
        )
        for r in records:
            writer.writerow(
                [r.replicate, r.method, _fmt(r.beta_true), _fmt(r.lower), _fmt(r.upper),
                 _fmt(r.covered), _fmt(r.width), _fmt(r.sign_fp), _fmt(r.sign_tp),
                 _fmt(r.failed)]
            )


def write_summary_csv(path, summaries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "coverage", "mean_width", "fp_prop", "tp_prop", "n_effective"]
        )
        for s in summaries:
            writer.writerow(
                [s.method, _fmt(s.coverage), _fmt(s.mean_width), _fmt(s.fp_prop),
                 _fmt(s.tp_prop), s.n_effective]
            )


def paper_scale(cfg: SimConfig) -> SimConfig:
    """Restore the full-scale study sizes behind the --paper-scale flag."""
    return replace(cfg, n_train=10000, n_replicates=250)
