"""Domain types, dataset validation and the CSV dataset format.

All containers are frozen dataclasses whose arrays are marked read-only, so
they can be shared freely between threads and worker processes.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (DuplicateColumnName, EmptyGroup, MissingColumn,
                     NonFiniteValue, PreconditionError)

GROUP_COLUMN = "group"


class Family(enum.Enum):
    LINEAR = "linear"
    HIERARCHICAL_NORMAL = "hierarchical"
    LMM = "lmm"
    GLMM_BINOMIAL = "glmm-binomial"
    GLMM_POISSON = "glmm-poisson"

    @property
    def grouped(self) -> bool:
        return self is not Family.LINEAR

    @property
    def has_random(self) -> bool:
        return self in (Family.LMM, Family.GLMM_BINOMIAL, Family.GLMM_POISSON)


def _frozen(a, ndim=None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if ndim is not None and a.ndim != ndim:
        raise PreconditionError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelSpec:
    """Which model is fitted: family plus fixed and random design columns.

    ``correlated_random`` requests an unstructured 2x2 intercept/slope
    covariance and is only honoured by the GLMM fitter.
    """

    family: Family
    fixed_columns: tuple[str, ...] = ()
    random_columns: tuple[str, ...] = ()
    intercept_fixed: bool = True
    intercept_random: bool = False
    correlated_random: bool = False
    response: str = "y"

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "fixed_columns", tuple(self.fixed_columns))
        object.__setattr__(self, "random_columns", tuple(self.random_columns))
        if not self.family.has_random and (self.random_columns or self.intercept_random):
            raise PreconditionError(
                f"random effects are not allowed for family {self.family.value}")
        if self.correlated_random and self.n_random != 2:
            raise PreconditionError(
                "a correlated random-effect block needs exactly intercept + one slope")

    @property
    def n_random(self) -> int:
        return len(self.random_columns) + int(self.intercept_random)

    @property
    def referenced_columns(self) -> tuple[str, ...]:
        cols = list(self.fixed_columns)
        cols += [c for c in self.random_columns if c not in cols]
        return tuple(cols)


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    X: np.ndarray
    column_names: tuple[str, ...]
    response: str = "y"

    def __post_init__(self):
        y = _frozen(self.y, 1)
        X = _frozen(np.reshape(self.X, (y.size, -1)) if np.size(self.X) else
                    np.empty((y.size, 0)), 2)
        names = tuple(self.column_names)
        if y.size < 1:
            raise PreconditionError("a dataset needs at least one row")
        if X.shape[1] != len(names):
            raise PreconditionError("column_names does not match the columns of X")
        seen = set()
        for name in (self.response, *names):
            if name in seen:
                raise DuplicateColumnName(name)
            seen.add(name)
        for j, name in enumerate((self.response, *names)):
            col = y if j == 0 else X[:, j - 1]
            bad = np.flatnonzero(~np.isfinite(col))
            if bad.size:
                raise NonFiniteValue(int(bad[0]), name)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.y.size

    def column(self, name: str) -> np.ndarray:
        try:
            return self.X[:, self.column_names.index(name)]
        except ValueError:
            raise MissingColumn(name) from None

    def design(self, columns: Sequence[str], intercept: bool) -> np.ndarray:
        parts = [np.ones(self.n)] if intercept else []
        parts += [self.column(c) for c in columns]
        if not parts:
            return np.empty((self.n, 0))
        return np.column_stack(parts)


@dataclass(frozen=True)
class GroupedDataset:
    """A dataset plus one group label per row.

    ``group`` holds integer codes ``0..p_groups-1``; ``labels[code]`` is the
    original label. ``Z`` is the random-effect design for the spec the
    dataset was validated against, if any.
    """

    base: Dataset
    group: np.ndarray
    labels: tuple[str, ...]
    Z: np.ndarray | None = None

    def __post_init__(self):
        g = np.asarray(self.group)
        if g.shape != (self.base.n,):
            raise PreconditionError("group vector must have one entry per row")
        g = g.astype(np.int64)
        labels = tuple(str(s) for s in self.labels)
        if len(labels) < 1:
            raise PreconditionError("at least one group is required")
        if g.min() < 0 or g.max() >= len(labels):
            raise PreconditionError("group codes out of range")
        counts = np.bincount(g, minlength=len(labels))
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise EmptyGroup(labels[empty[0]])
        g.setflags(write=False)
        object.__setattr__(self, "group", g)
        object.__setattr__(self, "labels", labels)
        if self.Z is not None:
            Z = _frozen(self.Z, 2)
            if Z.shape[0] != self.base.n:
                raise PreconditionError("Z must have n rows")
            object.__setattr__(self, "Z", Z)

    @property
    def p_groups(self) -> int:
        return len(self.labels)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def y(self) -> np.ndarray:
        return self.base.y

    @property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.group, minlength=self.p_groups)

    def group_indices(self) -> list[np.ndarray]:
        order = np.argsort(self.group, kind="stable")
        bounds = np.cumsum(self.group_sizes)[:-1]
        return np.split(order, bounds)

    def design(self, columns: Sequence[str], intercept: bool) -> np.ndarray:
        return self.base.design(columns, intercept)


def _param_tuple(names):
    return tuple(names) if names is not None else ()


@dataclass(frozen=True, kw_only=True)
class FitResult:
    """Maximum-likelihood fit.

    ``theta_hat`` is ordered fixed effects first (intercept, then columns in
    declaration order), then random-effect variance components, then the
    residual variance. ``loglik_fn`` evaluates the log-likelihood in exactly
    that parameterization; it is what the curvature module differentiates.
    """

    theta_hat: np.ndarray
    loglik: float
    n_eff: float
    converged: bool
    iterations: int
    family: Family
    param_names: tuple[str, ...] = ()
    loglik_fn: Callable[[np.ndarray], float] | None = field(
        default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "theta_hat", _frozen(self.theta_hat, 1))
        object.__setattr__(self, "param_names", _param_tuple(self.param_names))
        if self.n_eff < 1:
            raise PreconditionError("n_eff must be >= 1")
        if self.converged and not math.isfinite(self.loglik):
            raise PreconditionError("a converged fit must have a finite loglik")

    @property
    def p_params(self) -> int:
        return self.theta_hat.size

    def with_n_eff(self, n_eff: float):
        return replace(self, n_eff=n_eff)


@dataclass(frozen=True)
class CurvatureResult:
    information: np.ndarray
    log_det: float
    min_eigenvalue: float
    regularized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "information", _frozen(self.information, 2))


@dataclass(frozen=True)
class CriteriaReport:
    """All criteria for one fitted model. ``aicc`` is ``None`` when n <= p + 1."""

    aic: float
    aicc: float | None
    bic: float
    caif: float
    icomp: float | None
    bic_hes: float
    bic_hes_sp: float
    loglik: float
    p_params: int
    n_eff: float
    log_det: float

    def value(self, kind) -> float | None:
        return getattr(self, getattr(kind, "value", kind))


# -- CSV format -------------------------------------------------------------

def read_rows(source) -> list[dict[str, str]]:
    """Parse a CSV path or open text file into a list of row mappings."""
    if hasattr(source, "read"):
        return _read(source)
    with open(source, newline="", encoding="utf-8") as fh:
        return _read(fh)


def parse_rows(text: str) -> list[dict[str, str]]:
    return _read(io.StringIO(text))


def _read(fh) -> list[dict[str, str]]:
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        return []
    seen = set()
    for h in header:
        if h in seen:
            raise DuplicateColumnName(h)
        seen.add(h)
    rows = []
    for rec in reader:
        if not rec:
            continue
        rows.append(dict(zip(header, (v.strip() for v in rec))))
    return rows


def _to_float(value, row, column) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise NonFiniteValue(row, column) from None
    if not math.isfinite(x):
        raise NonFiniteValue(row, column)
    return x


def validate_dataset(rows: Sequence[Mapping[str, object]], spec: ModelSpec,
                     group_levels: Iterable[str] | None = None):
    """Build a validated dataset from parsed rows.

    Every non-group column must be numeric. Returns a :class:`GroupedDataset`
    when the family needs groups, otherwise a :class:`Dataset`.
    ``group_levels`` declares the expected groups; a declared level without
    rows raises :class:`EmptyGroup`.
    """
    if not rows:
        raise PreconditionError("no data rows")
    header = list(rows[0].keys())
    need = [spec.response, *spec.referenced_columns]
    if spec.family.grouped:
        need.append(GROUP_COLUMN)
    for name in need:
        if name not in header:
            raise MissingColumn(name)
    numeric = [h for h in header if h not in (GROUP_COLUMN, spec.response)]
    y = np.empty(len(rows))
    X = np.empty((len(rows), len(numeric)))
    for i, row in enumerate(rows):
        y[i] = _to_float(row.get(spec.response), i, spec.response)
        for j, name in enumerate(numeric):
            X[i, j] = _to_float(row.get(name), i, name)
    base = Dataset(y, X, tuple(numeric), response=spec.response)
    if not spec.family.grouped:
        return base
    raw = [str(row[GROUP_COLUMN]) for row in rows]
    if group_levels is not None:
        labels = [str(g) for g in group_levels]
        extra = [g for g in dict.fromkeys(raw) if g not in labels]
        labels += extra
    else:
        labels = list(dict.fromkeys(raw))
    code = {g: k for k, g in enumerate(labels)}
    group = np.array([code[g] for g in raw], dtype=np.int64)
    Z = base.design(spec.random_columns, spec.intercept_random) if spec.n_random else None
    return GroupedDataset(base, group, tuple(labels), Z=Z)


def dataset_to_csv(data, fh=None) -> str:
    """Serialize a dataset; floats are written with ``repr`` so they round-trip."""
    out = io.StringIO() if fh is None else fh
    writer = csv.writer(out, lineterminator="\n")
    base = data.base if isinstance(data, GroupedDataset) else data
    header = [base.response, *base.column_names]
    if isinstance(data, GroupedDataset):
        header.append(GROUP_COLUMN)
    writer.writerow(header)
    for i in range(base.n):
        rec = [repr(float(base.y[i]))] + [repr(float(v)) for v in base.X[i]]
        if isinstance(data, GroupedDataset):
            rec.append(data.labels[data.group[i]])
        writer.writerow(rec)
    return out.getvalue() if fh is None else ""


def load_dataset(path, spec: ModelSpec):
    return validate_dataset(read_rows(path), spec)
