"""Command-line front end: fit datasets, run studies, inspect bias bounds."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import glm
from .data import SchemaError, ValidationError, load_target, load_training
from .families import family_from_token
from .inference import FitStageError, fit, write_result
from .neighbors import select_adaptive_k
from .simulation import (
    SimConfig,
    generate_dataset,
    paper_scale,
    run_study,
    summarize,
    write_records_csv,
    write_summary_csv,
)
from .transport import (
    MassImbalanceError,
    SignedWeighting,
    dual_check,
    lipschitz_supremum,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_CONFIG_KEYS = {
    "design", "scale", "shift", "n_train", "n_target", "n_replicates",
    "seed_base", "methods", "alpha", "lipschitz", "k", "custom",
}


class ConfigError(ValueError):
    pass


def _parse_k_policy(token: str):
    if token == "adaptive":
        return "adaptive"
    if token.startswith("fixed:"):
        try:
            k = int(token.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad fixed neighbor count in {token!r}") from None
        if k < 1:
            raise ConfigError("fixed neighbor count must be >= 1")
        return k
    raise ConfigError(f"k policy must be 'adaptive' or 'fixed:<k>', got {token!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatialglm",
        description="Conservative GLM inference at fixed spatial target locations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one dataset and write intervals")
    p_fit.add_argument("--train", required=True, help="training CSV (s1..sd,x1..xP,y)")
    p_fit.add_argument("--target", required=True, help="target CSV (s1..sd,x1..xP)")
    p_fit.add_argument("--family", required=True, help="bernoulli|poisson|gaussian")
    p_fit.add_argument("--lipschitz", required=True, type=float,
                       help="Lipschitz constant of the conditional mean surface")
    p_fit.add_argument("--alpha", type=float, default=0.05)
    p_fit.add_argument("--k", default="adaptive", help="adaptive or fixed:<k>")
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--out", required=True, help="output result document")
    p_fit.add_argument("--ktrace-out", default=None,
                       help="optional CSV (N,k,R) of the adaptive-k recursion")

    p_sim = sub.add_parser("simulate", help="run a replication study from a config")
    p_sim.add_argument("--config", required=True, help="JSON study config")
    p_sim.add_argument("--out-dir", required=True)
    p_sim.add_argument("--paper-scale", action="store_true",
                       help="full-scale run: N=10000, 250 replicates, full grids")
    p_sim.add_argument("--jobs", type=int, default=1)
    p_sim.add_argument("--svg", action="store_true",
                       help="also render a minimal coverage-vs-parameter chart")

    p_bb = sub.add_parser("bias-bound", help="Lipschitz supremum for weighted points")
    p_bb.add_argument("--targets", required=True, help="CSV with header s1..sd,w")
    p_bb.add_argument("--train", required=True, help="CSV with header s1..sd,w")
    p_bb.add_argument("--lipschitz", type=float, default=1.0)
    return parser


def _cmd_fit(args) -> int:
    train = load_training(args.train)
    targets = load_target(args.target)
    fam = family_from_token(args.family)
    k_policy = _parse_k_policy(args.k)
    result = fit(
        train, targets, fam,
        L=args.lipschitz, alpha=args.alpha, k_policy=k_policy, seed=args.seed,
    )
    write_result(args.out, result)
    if args.ktrace_out is not None:
        if k_policy != "adaptive":
            raise ConfigError("--ktrace-out requires --k adaptive")
        select_adaptive_k(train.locations, targets).write_csv(args.ktrace_out)
    return EXIT_OK


def _load_config(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    if "design" not in raw:
        raise ConfigError(f"{path}: missing required key 'design'")
    return raw


def _configs_from_file(raw: dict, use_paper_scale: bool):
    """Expand a config into (param_label, SimConfig) pairs."""
    design = raw["design"]
    kwargs = dict(
        design=design,
        n_train=int(raw.get("n_train", 2000)),
        n_target=int(raw.get("n_target", 100)),
        n_replicates=int(raw.get("n_replicates", 100)),
        seed_base=int(raw.get("seed_base", 0)),
        methods=tuple(raw.get("methods", ["ours"])),
        alpha=float(raw.get("alpha", 0.05)),
        lipschitz=float(raw.get("lipschitz", 0.25)),
        k_policy=_parse_k_policy(raw.get("k", "adaptive")),
        custom=bool(raw.get("custom", False)),
    )
    if design == "infill":
        values = raw.get("scale", 0.25)
        key = "scale"
    elif design == "extrapolation":
        values = raw.get("shift", 0.25)
        key = "shift"
    else:
        values = None
        key = None

    if use_paper_scale:
        kwargs["n_train"] = 10000
        kwargs["n_replicates"] = 250
        if design == "infill":
            values = [i / 16 for i in range(1, 17)]
        elif design == "extrapolation":
            values = [i / 16 for i in range(1, 9)]

    if key is None:
        return [(None, SimConfig(**kwargs))]
    if not isinstance(values, (list, tuple)):
        values = [values]
    out = []
    for v in values:
        out.append((f"{key}={float(v):g}", SimConfig(**{**kwargs, key: float(v)})))
    return out


def _write_svg(path, series: dict[str, list[tuple[float, float]]], nominal: float) -> None:
    """Bare-bones coverage-vs-parameter polyline chart (no styling promises)."""
    width, height, margin = 480, 320, 40
    xs = sorted({x for pts in series.values() for x, _ in pts})
    if not xs:
        return
    x_lo, x_hi = min(xs), max(xs)
    x_span = (x_hi - x_lo) or 1.0

    def sx(x):
        return margin + (x - x_lo) / x_span * (width - 2 * margin)

    def sy(y):
        return height - margin - max(0.0, min(1.0, y)) * (height - 2 * margin)

    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<line x1="{margin}" y1="{sy(nominal):.1f}" x2="{width - margin}" '
        f'y2="{sy(nominal):.1f}" stroke="gray" stroke-dasharray="4"/>',
    ]
    for i, (name, pts) in enumerate(series.items()):
        color = palette[i % len(palette)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(pts))
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}"/>'
        )
        parts.append(
            f'<text x="{width - margin + 2}" y="{margin + 14 * i}" font-size="10" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")


def _cmd_simulate(args) -> int:
    raw = _load_config(args.config)
    runs = _configs_from_file(raw, args.paper_scale)
    out_root = Path(args.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    coverage_series: dict[str, list[tuple[float, float]]] = {}
    combined_rows = []
    for label, cfg in runs:
        out_dir = out_root if label is None or len(runs) == 1 else out_root / label
        out_dir.mkdir(parents=True, exist_ok=True)
        records = run_study(cfg, jobs=max(1, args.jobs))
        summaries = summarize(records, method_order=cfg.methods)
        write_records_csv(out_dir / "records.csv", records)
        write_summary_csv(out_dir / "summary.csv", summaries)
        if cfg.k_policy == "adaptive":
            train, targets, _ = generate_dataset(cfg, cfg.seed_base)
            select_adaptive_k(train.locations, targets).write_csv(out_dir / "ktrace.csv")
        if label is not None:
            param = float(label.split("=", 1)[1])
            for s in summaries:
                combined_rows.append((label, s))
                coverage_series.setdefault(s.method, []).append((param, s.coverage))

    if len(runs) > 1:
        with open(out_root / "coverage_by_param.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["param", "method", "coverage", "mean_width", "fp_prop", "tp_prop"])
            for label, s in combined_rows:
                writer.writerow([
                    label, s.method, format(s.coverage, ".17g"),
                    format(s.mean_width, ".17g"), format(s.fp_prop, ".17g"),
                    format(s.tp_prop, ".17g"),
                ])
    if args.svg:
        cfg0 = runs[0][1]
        if coverage_series:
            _write_svg(out_root / "coverage.svg", coverage_series, 1.0 - cfg0.alpha)
    return EXIT_OK


def _load_weighted_points(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        d = 0
        while d < len(header) - 1 and header[d] == f"s{d + 1}":
            d += 1
        if d == 0 or header != [f"s{i + 1}" for i in range(d)] + ["w"]:
            raise SchemaError(f"{path}: header must be s1,...,sd,w")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise SchemaError(f"{path}: row {lineno}: expected {d + 1} fields")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise SchemaError(f"{path}: row {lineno}: non-numeric field") from None
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = np.asarray(rows)
    return SignedWeighting(data[:, :d], data[:, d])


def _cmd_bias_bound(args) -> int:
    sw_targets = _load_weighted_points(args.targets)
    sw_train = _load_weighted_points(args.train)
    sup = lipschitz_supremum(sw_targets, sw_train)

    # cross-check against the Kantorovich dual on the merged signed measure
    from .transport import DiscreteMeasure, _merge_coincident

    pts = np.vstack([sw_targets.points, sw_train.points])
    wts = np.concatenate([sw_targets.weights, -sw_train.weights])
    keep = wts != 0.0
    if keep.any():
        mpts, mwts = _merge_coincident(pts[keep], wts[keep])
        pos, neg = mwts > 0, mwts < 0
        if pos.any() and neg.any():
            dual = dual_check(
                DiscreteMeasure(mpts[pos], mwts[pos]),
                DiscreteMeasure(mpts[neg], -mwts[neg]),
            )
        else:
            dual = 0.0
    else:
        dual = 0.0
    print(f"bound = {format(args.lipschitz * sup, '.17g')}")
    print(f"supremum = {format(sup, '.17g')}")
    print(f"dual_check = {format(dual, '.17g')}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_bias_bound(args)
    except FitStageError as exc:
        if isinstance(exc.original, (ValidationError, SchemaError, ValueError)):
            print(f"spatialglm: invalid input in stage {exc.stage}: {exc.original}",
                  file=sys.stderr)
            return EXIT_VALIDATION
        print(f"spatialglm: numerical failure in stage {exc.stage}: {exc.original}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    except (SchemaError, ValidationError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"spatialglm: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (glm.NonExistenceError, glm.NonConvergenceError, glm.SingularHessianError,
            MassImbalanceError, RuntimeError) as exc:
        print(f"spatialglm: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
