"""Simulation designs for comparing selection criteria.

Three studies are provided: a linear regression ladder with appended noise
regressors, a linear mixed model with noise in both the fixed and the random
part, and a crossed subjects x stimuli design (Gaussian, binomial, Poisson)
where the true random slope is compared against a random-intercept-only fit.

Seeding: every replicate draws from its own stream,
``np.random.SeedSequence(seed, spawn_key=(study_code, *cell_key, replicate))``,
so results do not depend on execution order or on the number of workers.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .core import Dataset, Family, GroupedDataset, ModelSpec
from .criteria import ALL_CRITERIA, CriterionKind, compute_criteria, select_model
from .curvature import HessianConfig, observed_information
from .errors import CurvebicError, PoissonOverflow, PreconditionError, UndefinedCriterion
from .fitters import fit

POISSON_MEAN_MAX = 1e8
UNUSABLE_FAILURE_SHARE = 0.5

_STUDY_CODES = {"linear": 1, "mixed": 2, "glmm": 3, "consistency": 4}
GLMM_FAMILIES = ("gaussian", "binomial", "poisson")


# -- configs ----------------------------------------------------------------

@dataclass(frozen=True)
class LinearStudyConfig:
    """Linear ladder study. A cell is (k, n, noise); the candidates are the
    true model plus the true model with the first j noise columns, j = 1..noise.
    Noise counts above k are skipped."""

    k_values: tuple[int, ...] = (2, 4, 6, 8, 10)
    n_values: tuple[int, ...] = (10, 15, 20, 50, 100, 500)
    noise_values: tuple[int, ...] = tuple(range(1, 11))
    noise_max: int = 10
    replications: int = 200
    seed: int = 0
    regressor_mean: float = 10.0
    regressor_sd: float = 1.0
    coef_mean: float = 10.0
    coef_sd: float = 2.0
    error_sd: float = 1.0
    noise_mean: float = 3.0
    noise_sd: float = 3.0

    def __post_init__(self):
        if self.replications < 1:
            raise PreconditionError("replications must be >= 1")
        if min(self.k_values) < 1 or min(self.n_values) < 2:
            raise PreconditionError("k must be >= 1 and n >= 2")
        if min(self.noise_values) < 0 or max(self.noise_values) > self.noise_max:
            raise PreconditionError(f"noise counts must lie in 0..{self.noise_max}")

    def cells(self):
        for k, n, m in itertools.product(self.k_values, self.n_values, self.noise_values):
            if m <= k:
                yield (k, n, m)


@dataclass(frozen=True)
class MixedStudyConfig:
    """Mixed-model study. Three fixed regressors, a random intercept and three
    random slopes on separate regressors. A cell is
    (n, groups, noise_fixed, noise_random); candidates are every
    (first jf fixed noise, first jr random noise) pair.

    The drawn random-effect parameters N(3, 1) are used as standard deviations
    (absolute value) of the random slopes. ``zero_random`` switches all
    random effects off, which reduces the data to a plain linear model.
    """

    n_values: tuple[int, ...] = (20, 50, 100, 500)
    group_counts: tuple[int, ...] = (5, 10, 20)
    noise_fixed_values: tuple[int, ...] = (0, 1, 2, 3)
    noise_random_values: tuple[int, ...] = (0, 1, 2, 3)
    replications: int = 5
    seed: int = 0
    fixed_regressor_mean: float = 2.0
    fixed_regressor_sd: float = 3.0
    fixed_coef_mean: float = 2.0
    fixed_coef_sd: float = 3.0
    error_sd: float = 1.0
    random_regressor_mean: float = 3.0
    random_regressor_sd: float = 3.0
    random_coef_sd_mean: float = 3.0
    random_coef_sd_sd: float = 1.0
    group_error_sd: float = 2.0
    noise_mean: float = 3.0
    noise_sd: float = 3.0
    zero_random: bool = False

    n_fixed = 3
    n_random = 3

    def __post_init__(self):
        if self.replications < 1:
            raise PreconditionError("replications must be >= 1")
        if min(self.group_counts) < 2:
            raise PreconditionError("at least two groups are needed")
        if max(self.noise_fixed_values) > self.n_fixed or max(self.noise_random_values) > self.n_random:
            raise PreconditionError("noise variables may not outnumber the original regressors")
        if min(self.noise_fixed_values) < 0 or min(self.noise_random_values) < 0:
            raise PreconditionError("noise counts must be >= 0")

    def cells(self):
        yield from itertools.product(self.n_values, self.group_counts,
                                     self.noise_fixed_values, self.noise_random_values)


@dataclass(frozen=True)
class GlmmStudyConfig:
    """Crossed subjects x stimuli study. Each subject sees every in-group
    (condition 0) and out-group (condition 1) stimulus once. Subjects carry a
    random intercept and a random condition slope with correlation rho.
    A cell is (family, subjects, ingroup, outgroup, rho).

    Random-effect standard deviations are per family:
    ``(intercept sd, slope sd)``; the Gaussian family also has ``gaussian_sigma``.
    ``poisson_log_mean_clip`` (if set) caps the linear predictor instead of
    raising :class:`PoissonOverflow`.
    """

    subjects: tuple[int, ...] = (20, 50, 100)
    ingroup_stimuli: tuple[int, ...] = (2, 5, 10)
    outgroup_stimuli: tuple[int, ...] = (2, 5, 10)
    rho_values: tuple[float, ...] = (-0.7, -0.5, 0.0, 0.5, 0.7)
    families: tuple[str, ...] = GLMM_FAMILIES
    gaussian_betas: tuple[float, float] = (800.0, 50.0)
    logistic_betas: tuple[float, float] = (0.5, 1.0)
    poisson_betas: tuple[float, float] = (5.0, 4.0)
    gaussian_sds: tuple[float, float] = (100.0, 40.0)
    gaussian_sigma: float = 200.0
    logistic_sds: tuple[float, float] = (0.5, 0.5)
    poisson_sds: tuple[float, float] = (0.5, 0.5)
    poisson_log_mean_clip: float | None = None
    nagq: int = 7
    replications: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise PreconditionError("replications must be >= 1")
        if any(not -1.0 < r < 1.0 for r in self.rho_values):
            raise PreconditionError("|rho| must be < 1")
        for fam in self.families:
            if fam not in GLMM_FAMILIES:
                raise PreconditionError(f"unknown GLMM study family {fam!r}")
        if min(self.subjects) < 2:
            raise PreconditionError("at least two subjects are needed")
        if min(self.ingroup_stimuli) < 1 or min(self.outgroup_stimuli) < 1:
            raise PreconditionError("each condition needs at least one stimulus")

    def cells(self):
        yield from itertools.product(self.families, self.subjects, self.ingroup_stimuli,
                                     self.outgroup_stimuli, self.rho_values)

    def betas(self, family: str):
        return {"gaussian": self.gaussian_betas, "binomial": self.logistic_betas,
                "poisson": self.poisson_betas}[family]

    def sds(self, family: str):
        return {"gaussian": self.gaussian_sds, "binomial": self.logistic_sds,
                "poisson": self.poisson_sds}[family]


STUDY_CONFIGS = {"linear": LinearStudyConfig, "mixed": MixedStudyConfig,
                 "glmm": GlmmStudyConfig}
CELL_FIELDS = {"linear": ("k", "n", "noise"),
               "mixed": ("n", "groups", "noise_fixed", "noise_random"),
               "glmm": ("family", "subjects", "ingroup", "outgroup", "rho")}


def study_name(cfg) -> str:
    for name, cls in STUDY_CONFIGS.items():
        if isinstance(cfg, cls):
            return name
    raise PreconditionError(f"not a study config: {type(cfg).__name__}")


def _coerce(value: str, default):
    if isinstance(default, bool):
        low = value.lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"expected a boolean, got {value!r}")
        return low in ("1", "true", "yes")
    if isinstance(default, tuple):
        items = [v.strip() for v in value.split(",") if v.strip()]
        elem = default[0] if default else 0.0
        if isinstance(elem, str):
            return tuple(items)
        return tuple(type(elem)(float(v)) if isinstance(elem, int) else float(v) for v in items)
    if isinstance(default, int):
        f = float(value)
        if f != int(f):
            raise ValueError(f"expected an integer, got {value!r}")
        return int(f)
    if default is None or isinstance(default, float):
        return None if value.lower() in ("none", "") else float(value)
    return value


def parse_config(text: str, study: str, **overrides):
    """Build a study config from ``key = value`` lines.

    Blank lines and ``#`` comments are ignored, lists are comma separated,
    and keys are the config field names. Unknown keys raise ValueError.
    """
    try:
        cls = STUDY_CONFIGS[study]
    except KeyError:
        raise ValueError(f"unknown study {study!r}") from None
    defaults = {f.name: f.default for f in fields(cls)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ValueError(f"line {lineno}: unknown key {key!r} for the {study} study")
        try:
            values[key] = _coerce(value, defaults[key])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {key}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)


def load_config(path, study: str, **overrides):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), study, **overrides)


# -- seeding ----------------------------------------------------------------

def _cell_key(cell) -> tuple[int, ...]:
    key = []
    for v in cell:
        if isinstance(v, str):
            key.append(GLMM_FAMILIES.index(v))
        elif isinstance(v, float):
            # rho in (-1, 1) -> 0..2000
            key.append(int(round((v + 1.0) * 1000)))
        else:
            key.append(int(v))
    return tuple(key)


def replicate_rng(seed: int, study: str, cell, replicate: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(_STUDY_CODES[study], *_cell_key(cell),
                                                      int(replicate)))
    return np.random.default_rng(ss)


# -- generators -------------------------------------------------------------

def gen_linear(cfg: LinearStudyConfig, cell, replicate_index: int, with_truth: bool = False):
    """Data for one replicate of a linear cell ``(k, n, noise)``.

    Returns ``(Dataset, true_spec, candidates)``; ``candidates[0]`` is the
    true model and ``candidates[j]`` adds the first j noise columns. With
    ``with_truth`` a dict of the drawn coefficients is appended.
    """
    k, n, m = (int(c) for c in cell)
    if m > k or m < 0 or k < 1:
        raise PreconditionError("noise count must be in 0..k")
    rng = replicate_rng(cfg.seed, "linear", (k, n, m), replicate_index)
    X = rng.normal(cfg.regressor_mean, cfg.regressor_sd, size=(n, k))
    beta = rng.normal(cfg.coef_mean, cfg.coef_sd, size=k + 1)
    eps = rng.normal(0.0, cfg.error_sd, size=n)
    y = beta[0] + X @ beta[1:] + eps
    noise = rng.normal(cfg.noise_mean, cfg.noise_sd, size=(n, m))
    xs = [f"x{j + 1}" for j in range(k)]
    ns = [f"noise{j + 1}" for j in range(m)]
    data = Dataset(y, np.column_stack([X, noise]), (*xs, *ns))
    true = ModelSpec(Family.LINEAR, tuple(xs))
    cands = [ModelSpec(Family.LINEAR, (*xs, *ns[:j])) for j in range(m + 1)]
    if with_truth:
        return data, true, cands, {"beta": beta}
    return data, true, cands


def _balanced_groups(n: int, g: int) -> np.ndarray:
    if n < g:
        raise PreconditionError("fewer observations than groups")
    return np.arange(n) % g


def gen_mixed(cfg: MixedStudyConfig, cell, replicate_index: int, with_truth: bool = False):
    """Data for one replicate of a mixed cell ``(n, groups, noise_fixed, noise_random)``.

    Observations are assigned to groups round-robin. Returns
    ``(GroupedDataset, true_spec, candidates)``; candidates are ordered by
    (fixed noise count, random noise count) with the true model first.
    """
    n, g, mf, mr = (int(c) for c in cell)
    if mf > cfg.n_fixed or mr > cfg.n_random:
        raise PreconditionError("noise variables may not outnumber the original regressors")
    rng = replicate_rng(cfg.seed, "mixed", (n, g, mf, mr), replicate_index)
    group = _balanced_groups(n, g)
    X = rng.normal(cfg.fixed_regressor_mean, cfg.fixed_regressor_sd, size=(n, cfg.n_fixed))
    beta = rng.normal(cfg.fixed_coef_mean, cfg.fixed_coef_sd, size=cfg.n_fixed + 1)
    eps = rng.normal(0.0, cfg.error_sd, size=n)
    Z = rng.normal(cfg.random_regressor_mean, cfg.random_regressor_sd, size=(n, cfg.n_random))
    slope_sd = np.abs(rng.normal(cfg.random_coef_sd_mean, cfg.random_coef_sd_sd,
                                 size=cfg.n_random))
    u = rng.normal(size=(g, cfg.n_random)) * slope_sd
    u0 = rng.normal(0.0, cfg.group_error_sd, size=g)
    if cfg.zero_random:
        u = np.zeros_like(u)
        u0 = np.zeros_like(u0)
    y = beta[0] + X @ beta[1:] + u0[group] + np.sum(u[group] * Z, axis=1) + eps
    nf = rng.normal(cfg.noise_mean, cfg.noise_sd, size=(n, mf))
    nr = rng.normal(cfg.noise_mean, cfg.noise_sd, size=(n, mr))
    xs = [f"x{j + 1}" for j in range(cfg.n_fixed)]
    zs = [f"z{j + 1}" for j in range(cfg.n_random)]
    fs = [f"noise_fixed{j + 1}" for j in range(mf)]
    rs = [f"noise_random{j + 1}" for j in range(mr)]
    base = Dataset(y, np.column_stack([X, Z, nf, nr]), (*xs, *zs, *fs, *rs))
    labels = tuple(f"g{j + 1}" for j in range(g))

    def spec(jf, jr):
        return ModelSpec(Family.LMM, (*xs, *fs[:jf]), (*zs, *rs[:jr]), intercept_random=True)

    true = spec(0, 0)
    cands = [spec(jf, jr) for jf in range(mf + 1) for jr in range(mr + 1)]
    Zt = base.design(true.random_columns, True)
    data = GroupedDataset(base, group, labels, Z=Zt)
    if with_truth:
        return data, true, cands, {"beta": beta, "intercepts": u0, "slopes": u,
                                   "slope_sd": slope_sd}
    return data, true, cands


def _random_effects(rng, n: int, sds, rho: float) -> np.ndarray:
    s0, s1 = sds
    cov = np.array([[s0 * s0, rho * s0 * s1], [rho * s0 * s1, s1 * s1]])
    return rng.multivariate_normal(np.zeros(2), cov, size=n, method="cholesky")


def gen_glmm(cfg: GlmmStudyConfig, cell, replicate_index: int, family: str | None = None,
             with_truth: bool = False):
    """Data for one replicate of a crossed design cell
    ``(family, subjects, ingroup, outgroup, rho)``.

    Returns ``(GroupedDataset, true_spec, misspecified_spec)``; the
    misspecified model drops the random condition slope.
    """
    fam, subjects, n_in, n_out, rho = cell
    fam = family or fam
    if fam not in GLMM_FAMILIES:
        raise PreconditionError(f"unknown family {fam!r}")
    if not -1.0 < rho < 1.0:
        raise PreconditionError("|rho| must be < 1")
    subjects, n_in, n_out = int(subjects), int(n_in), int(n_out)
    rng = replicate_rng(cfg.seed, "glmm", (fam, subjects, n_in, n_out, float(rho)),
                        replicate_index)
    per = n_in + n_out
    group = np.repeat(np.arange(subjects), per)
    cond = np.tile(np.r_[np.zeros(n_in), np.ones(n_out)], subjects)
    stim = np.tile(np.arange(per, dtype=float), subjects)
    b = _random_effects(rng, subjects, cfg.sds(fam), float(rho))
    b0, b1 = cfg.betas(fam)
    eta = b0 + b1 * cond + b[group, 0] + b[group, 1] * cond
    if fam == "gaussian":
        y = eta + rng.normal(0.0, cfg.gaussian_sigma, size=eta.size)
        true = ModelSpec(Family.LMM, ("condition",), ("condition",), intercept_random=True)
        wrong = ModelSpec(Family.LMM, ("condition",), (), intercept_random=True)
    elif fam == "binomial":
        y = (rng.random(eta.size) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        true = ModelSpec(Family.GLMM_BINOMIAL, ("condition",), ("condition",),
                         intercept_random=True, correlated_random=True)
        wrong = ModelSpec(Family.GLMM_BINOMIAL, ("condition",), (), intercept_random=True)
    else:
        if cfg.poisson_log_mean_clip is not None:
            eta = np.minimum(eta, cfg.poisson_log_mean_clip)
        top = float(np.max(eta))
        if top > math.log(POISSON_MEAN_MAX):
            raise PoissonOverflow(f"simulated Poisson mean exp({top:.3g}) exceeds "
                                  f"{POISSON_MEAN_MAX:g}")
        y = rng.poisson(np.exp(eta)).astype(float)
        true = ModelSpec(Family.GLMM_POISSON, ("condition",), ("condition",),
                         intercept_random=True, correlated_random=True)
        wrong = ModelSpec(Family.GLMM_POISSON, ("condition",), (), intercept_random=True)
    base = Dataset(y, np.column_stack([cond, stim]), ("condition", "stimulus"))
    labels = tuple(f"s{j + 1}" for j in range(subjects))
    data = GroupedDataset(base, group, labels, Z=base.design(("condition",), True))
    if with_truth:
        return data, true, wrong, {"effects": b}
    return data, true, wrong


# -- study runner -----------------------------------------------------------

@dataclass(frozen=True)
class ReplicateOutcome:
    """One replicate. ``chosen[kind]`` is True/False, or None when the
    criterion is undefined for a surviving candidate (AICc with n <= p + 1).
    ``fitted`` counts candidates that fitted with a usable curvature."""

    valid: bool
    candidates: int
    fitted: int = 0
    chosen: dict = field(default_factory=dict)
    failures: tuple[str, ...] = ()
    logliks: tuple = ()


def _generate(study: str, cfg, cell, rep):
    if study == "linear":
        return gen_linear(cfg, cell, rep)
    if study == "mixed":
        return gen_mixed(cfg, cell, rep)
    data, true, wrong = gen_glmm(cfg, cell, rep)
    return data, true, [true, wrong]


def _fit_one(study, cfg, data, spec, hcfg):
    kw = {}
    if spec.family in (Family.GLMM_BINOMIAL, Family.GLMM_POISSON):
        kw["nAGQ"] = cfg.nagq
    f = fit(data, spec, **kw)
    return f, compute_criteria(f, observed_information(f, hcfg))


def run_replicate(study: str, cfg, cell, rep: int,
                  criteria: Sequence[CriterionKind] = ALL_CRITERIA,
                  hessian: HessianConfig | None = None) -> ReplicateOutcome:
    """Generate, fit every candidate and apply each criterion.

    The true model is candidate 0. Candidates whose fit or curvature fails
    are skipped and their exception names recorded; the replicate is valid
    when the true model itself succeeded. ``logliks`` holds None for
    skipped candidates.
    """
    try:
        data, true, cands = _generate(study, cfg, cell, rep)
    except CurvebicError as exc:
        return ReplicateOutcome(False, 0, failures=(type(exc).__name__,))
    reports, failures, lls = [], [], []
    for spec in cands:
        try:
            f, rep_ = _fit_one(study, cfg, data, spec, hessian)
        except (CurvebicError, np.linalg.LinAlgError) as exc:
            failures.append(type(exc).__name__)
            lls.append(None)
            continue
        reports.append(rep_)
        lls.append(f.loglik)
    if lls[0] is None:
        return ReplicateOutcome(False, len(cands), len(reports), failures=tuple(failures),
                                logliks=tuple(lls))
    chosen = {}
    for kind in criteria:
        try:
            chosen[kind] = select_model(reports, kind) == 0
        except UndefinedCriterion:
            chosen[kind] = None
    return ReplicateOutcome(True, len(cands), len(reports), chosen, tuple(failures),
                            tuple(lls))


@dataclass(frozen=True)
class StudyRow:
    cell: tuple
    criterion: CriterionKind
    successes: int
    valid_replicates: int
    failures: int
    usable: bool

    @property
    def selection_rate(self) -> float:
        if self.valid_replicates == 0:
            return math.nan
        return self.successes / self.valid_replicates


@dataclass(frozen=True)
class StudyResult:
    """Selection rates per (cell, criterion).

    ``valid_replicates`` counts replicates where the true model fitted and
    the criterion was defined; ``failures`` counts failed candidate fits in
    the cell. ``failure_reasons`` maps cell -> Counter of exception names.
    ``fitted_models`` is candidates x valid replicates summed over cells;
    ``successful_fits`` counts the candidate fits in valid replicates that
    actually produced criteria.
    """

    study: str
    rows: tuple[StudyRow, ...]
    fitted_models: int
    failure_reasons: dict
    replications: int
    attempted_models: int = 0
    successful_fits: int = 0

    def rate(self, cell, kind) -> float:
        kind = CriterionKind(kind)
        for r in self.rows:
            if r.cell == tuple(cell) and r.criterion is kind:
                return r.selection_rate
        raise KeyError((cell, kind))

    def pooled_rate(self, kind) -> float:
        """Successes over valid replicates, pooled across cells."""
        kind = CriterionKind(kind)
        rs = [r for r in self.rows if r.criterion is kind and r.usable]
        valid = sum(r.valid_replicates for r in rs)
        return sum(r.successes for r in rs) / valid if valid else math.nan

    @property
    def cells(self):
        return tuple(dict.fromkeys(r.cell for r in self.rows))

    @property
    def unusable_cells(self):
        return tuple(dict.fromkeys(r.cell for r in self.rows if not r.usable))

    @property
    def failure_count(self) -> int:
        return sum(sum(c.values()) for c in self.failure_reasons.values())

    @property
    def failure_share(self) -> float:
        """Failed candidate fits over attempted candidate fits."""
        return self.failure_count / self.attempted_models if self.attempted_models else 0.0

    def to_csv(self, fh=None) -> str:
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["study", *CELL_FIELDS[self.study], "criterion", "selection_rate",
                    "valid_replicates", "failures", "usable"])
        for r in self.rows:
            rate = "NA" if r.valid_replicates == 0 else repr(r.selection_rate)
            cell = [repr(v) if isinstance(v, float) else v for v in r.cell]
            w.writerow([self.study, *cell, r.criterion.value, rate, r.valid_replicates,
                        r.failures, int(r.usable)])
        return out.getvalue() if fh is None else ""


def _task(args):
    study, cfg, cell, rep, criteria = args
    return run_replicate(study, cfg, cell, rep, criteria)


def run_study(cfg, which: str | None = None,
              criteria: Iterable[CriterionKind] = ALL_CRITERIA,
              jobs: int | None = 1, cells=None) -> StudyResult:
    """Run every (cell, replicate) of a study and aggregate selection rates.

    ``jobs`` > 1 farms replicates out to worker processes (None means all
    cores); the result is identical for any value. ``cells`` restricts the
    run to a subset of the config's cells.
    """
    study = which or study_name(cfg)
    if study_name(cfg) != study:
        raise PreconditionError(f"config does not describe a {study} study")
    criteria = tuple(CriterionKind(c) for c in criteria)
    cell_list = [tuple(c) for c in (cells if cells is not None else cfg.cells())]
    tasks = [(study, cfg, cell, rep, criteria)
             for cell in cell_list for rep in range(cfg.replications)]
    jobs = (os.cpu_count() or 1) if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(tasks) < 2:
        outcomes = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return aggregate(study, cell_list, cfg.replications, outcomes, criteria)


def aggregate(study, cell_list, replications, outcomes, criteria) -> StudyResult:
    rows, reasons, fitted, attempted, ok = [], {}, 0, 0, 0
    for ci, cell in enumerate(cell_list):
        outs = outcomes[ci * replications:(ci + 1) * replications]
        valid = [o for o in outs if o.valid]
        reasons[cell] = Counter(r for o in outs for r in o.failures)
        n_failed = sum(reasons[cell].values())
        fitted += sum(o.candidates for o in valid)
        ok += sum(o.fitted for o in valid)
        attempted += sum(max(o.candidates, 1) for o in outs)
        usable = len(outs) - len(valid) <= UNUSABLE_FAILURE_SHARE * len(outs)
        for kind in criteria:
            picks = [o.chosen[kind] for o in valid if o.chosen.get(kind) is not None]
            rows.append(StudyRow(cell, kind, sum(picks), len(picks), n_failed, usable))
    return StudyResult(study, tuple(rows), fitted, reasons, replications, attempted, ok)


# -- consistency ------------------------------------------------------------

@dataclass(frozen=True)
class ConsistencyRow:
    n: int
    rate: float
    valid_replicates: int


def consistency_curve(p0: int, p_extra: int, n_values: Sequence[int], replications: int,
                      seed: int, criterion: CriterionKind = CriterionKind.BIC_HES,
                      cfg: LinearStudyConfig | None = None) -> list[ConsistencyRow]:
    """Fraction of replicates where the true linear model M0 (p0 regressors
    plus intercept) beats M1 = M0 + p_extra noise regressors, i.e.
    criterion(M1) - criterion(M0) > 0, at each n. Data follow the linear
    study's distributions. The last row is the headline number."""
    if p_extra < 1:
        raise PreconditionError("p_extra must be >= 1")
    if p0 < 0:
        raise PreconditionError("p0 must be >= 0")
    n_values = [int(n) for n in n_values]
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise PreconditionError("n_values must be increasing")
    if replications < 1:
        raise PreconditionError("replications must be >= 1")
    cfg = cfg or LinearStudyConfig(k_values=(max(p0, 1),), noise_values=(0,))
    kind = CriterionKind(criterion)
    xs = tuple(f"x{j + 1}" for j in range(p0))
    ns = tuple(f"noise{j + 1}" for j in range(p_extra))
    m0 = ModelSpec(Family.LINEAR, xs)
    m1 = ModelSpec(Family.LINEAR, xs + ns)
    out = []
    for n in n_values:
        wins = valid = 0
        for rep in range(replications):
            rng = replicate_rng(seed, "consistency", (p0, p_extra, n), rep)
            X = rng.normal(cfg.regressor_mean, cfg.regressor_sd, size=(n, p0))
            beta = rng.normal(cfg.coef_mean, cfg.coef_sd, size=p0 + 1)
            y = beta[0] + X @ beta[1:] + rng.normal(0.0, cfg.error_sd, size=n)
            noise = rng.normal(cfg.noise_mean, cfg.noise_sd, size=(n, p_extra))
            data = Dataset(y, np.column_stack([X, noise]), xs + ns)
            try:
                vals = []
                for spec in (m0, m1):
                    f = fit(data, spec)
                    vals.append(compute_criteria(f, observed_information(f)).value(kind))
            except CurvebicError:
                continue
            if vals[0] is None or vals[1] is None:
                continue
            valid += 1
            wins += vals[1] - vals[0] > 0
        out.append(ConsistencyRow(n, wins / valid if valid else math.nan, valid))
    return out


def consistency_to_csv(rows: Sequence[ConsistencyRow], fh=None) -> str:
    out = io.StringIO() if fh is None else fh
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["n", "rate", "valid_replicates"])
    for r in rows:
        w.writerow([r.n, "NA" if r.valid_replicates == 0 else repr(r.rate), r.valid_replicates])
    return out.getvalue() if fh is None else ""
