"""Dataset containers and CSV ingestion.

Training files carry the header ``s1,...,sd,x1,...,xP,y`` and target files
``s1,...,sd,x1,...,xP``; one row per observation, row order meaningful.
All arrays are defensively copied and frozen after validation so datasets
can be shared freely across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """A file does not conform to the documented CSV schema."""


class ValidationError(ValueError):
    """Structurally well-formed data violates a dataset invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class TrainingSet:
    """Ordered training triples: locations (N,d), covariates (N,P), responses (N,).

    Row order is significant; the adaptive neighbor-count recursion consumes
    training points in exactly this order.
    """

    locations: np.ndarray
    covariates: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        locs = _frozen(np.atleast_2d(self.locations))
        X = _frozen(np.atleast_2d(self.covariates))
        y = _frozen(np.atleast_1d(self.responses))
        if locs.shape[0] < 1:
            raise ValidationError("training set is empty")
        if not (locs.shape[0] == X.shape[0] == y.shape[0]):
            raise ValidationError(
                f"inconsistent lengths: {locs.shape[0]} locations, "
                f"{X.shape[0]} covariate rows, {y.shape[0]} responses"
            )
        _check_finite(locs, "locations")
        _check_finite(X, "covariates")
        _check_finite(y, "responses")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class TargetSet:
    """Target locations (M,d) and covariates (M,P); responses are unobserved.

    Locations must be pairwise distinct (neighborhood-disjointness and the
    variance estimator presume it) and the covariate matrix must have full
    column rank for the weighted ML problem to be well posed.
    """

    locations: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        locs = _frozen(np.atleast_2d(self.locations))
        X = _frozen(np.atleast_2d(self.covariates))
        if locs.shape[0] < 1:
            raise ValidationError("target set is empty")
        if locs.shape[0] != X.shape[0]:
            raise ValidationError(
                f"inconsistent lengths: {locs.shape[0]} locations, "
                f"{X.shape[0]} covariate rows"
            )
        _check_finite(locs, "locations")
        _check_finite(X, "covariates")
        if np.unique(locs, axis=0).shape[0] != locs.shape[0]:
            raise ValidationError("duplicate target locations")
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise ValidationError(
                f"target covariate matrix is rank-deficient "
                f"(rank < {X.shape[1]} columns)"
            )
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "covariates", X)

    @property
    def m(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]


def _parse_header(fields: list[str], want_response: bool, path) -> tuple[int, int]:
    """Return (d, P) from a header of the form s1..sd,x1..xP[,y]."""
    i = 0
    d = 0
    while i < len(fields) and fields[i] == f"s{d + 1}":
        d += 1
        i += 1
    if d == 0:
        raise SchemaError(f"{path}: header must start with s1,...,sd")
    p = 0
    while i < len(fields) and fields[i] == f"x{p + 1}":
        p += 1
        i += 1
    if p == 0:
        raise SchemaError(f"{path}: header must contain x1,...,xP after locations")
    tail = fields[i:]
    if want_response:
        if tail != ["y"]:
            raise SchemaError(f"{path}: training header must end with a single y column")
    elif tail:
        raise SchemaError(f"{path}: unexpected trailing columns {tail} in target header")
    return d, p


def _read_rows(path, want_response: bool):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        d, p = _parse_header([h.strip() for h in header], want_response, path)
        width = d + p + (1 if want_response else 0)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise SchemaError(
                    f"{path}: row {lineno}: expected {width} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise SchemaError(
                    f"{path}: row {lineno}: non-numeric field in {row}"
                ) from None
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    return d, p, data


def load_training(path) -> TrainingSet:
    """Read a training CSV; row order in the file is preserved."""
    d, p, data = _read_rows(path, want_response=True)
    try:
        return TrainingSet(data[:, :d], data[:, d : d + p], data[:, d + p])
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def load_target(path) -> TargetSet:
    """Read a target CSV, enforcing distinct locations and full column rank."""
    d, p, data = _read_rows(path, want_response=False)
    try:
        return TargetSet(data[:, :d], data[:, d : d + p])
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _write_csv(path, header: list[str], matrix: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in matrix:
            # 17 significant digits round-trips any double exactly
            writer.writerow([format(v, ".17g") for v in row])


def save_training(path, train: TrainingSet) -> None:
    d, p = train.dim, train.n_covariates
    header = [f"s{i + 1}" for i in range(d)] + [f"x{j + 1}" for j in range(p)] + ["y"]
    matrix = np.column_stack([train.locations, train.covariates, train.responses])
    _write_csv(path, header, matrix)


def save_target(path, targets: TargetSet) -> None:
    d, p = targets.dim, targets.covariates.shape[1]
    header = [f"s{i + 1}" for i in range(d)] + [f"x{j + 1}" for j in range(p)]
    _write_csv(path, header, np.column_stack([targets.locations, targets.covariates]))
