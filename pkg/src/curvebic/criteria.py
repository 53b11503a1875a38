"""Information criteria, BIC-style Bayes factors and the evidence scale."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CriteriaReport, CurvatureResult, FitResult
from .errors import (DimensionMismatch, DomainError, PreconditionError,
                     SingularInformation, UndefinedCriterion)


class CriterionKind(enum.Enum):
    AIC = "aic"
    AICc = "aicc"
    BIC = "bic"
    CAIF = "caif"
    ICOMP = "icomp"
    BIC_HES = "bic_hes"
    BIC_HES_SP = "bic_hes_sp"

    @classmethod
    def parse(cls, name: str) -> "CriterionKind":
        key = name.strip().lower()
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown criterion {name!r}")


ALL_CRITERIA = tuple(CriterionKind)


def icomp_complexity(J) -> float:
    """C1 complexity of the inverse information:
    (s/2) log(tr(J^-1)/s) - 1/2 log det J^-1, with s = dim J."""
    J = np.asarray(J, dtype=float)
    s = J.shape[0]
    try:
        L = np.linalg.cholesky(J)
    except np.linalg.LinAlgError:
        raise SingularInformation("information matrix is not invertible") from None
    Linv = np.linalg.solve(L, np.eye(s))
    trace_inv = float(np.sum(Linv * Linv))
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    return 0.5 * s * math.log(trace_inv / s) + 0.5 * log_det


def compute_criteria(fit: FitResult, curv: CurvatureResult) -> CriteriaReport:
    if not fit.converged:
        raise PreconditionError("criteria need a converged fit")
    if not math.isfinite(curv.log_det):
        raise PreconditionError("log det of the information must be finite")
    ll, p, n = float(fit.loglik), fit.p_params, float(fit.n_eff)
    dev = -2.0 * ll
    logn = math.log(n)
    aic = dev + 2 * p
    aicc = aic + 2 * p * (p + 1) / (n - p - 1) if n > p + 1 else None
    bic = dev + p * logn
    caif = dev + p * (logn + 1.0)
    icomp = dev + 2.0 * icomp_complexity(curv.information)
    bic_hes = bic + curv.log_det
    bic_hes_sp = bic_hes - p * logn
    return CriteriaReport(aic=aic, aicc=aicc, bic=bic, caif=caif, icomp=icomp,
                          bic_hes=bic_hes, bic_hes_sp=bic_hes_sp, loglik=ll, p_params=p,
                          n_eff=n, log_det=curv.log_det)


def _exp_half(delta: float) -> float:
    try:
        return math.exp(0.5 * delta)
    except OverflowError:
        warnings.warn("Bayes factor overflows; reporting +inf", RuntimeWarning, stacklevel=3)
        return math.inf


def bf_from_bic_delta(bic0: float, bic1: float) -> float:
    """BF_{0,1} ~ exp((BIC(H1) - BIC(H0)) / 2). Overflow gives +inf and a RuntimeWarning."""
    if not (math.isfinite(bic0) and math.isfinite(bic1)):
        raise PreconditionError("BIC values must be finite")
    return _exp_half(bic1 - bic0)


def bf_from_bic_hes_delta(report0: CriteriaReport, report1: CriteriaReport) -> float:
    """BF_{0,1} = exp(dBIC_HES / 2); valid only for equal parameter counts and n."""
    if report0.p_params != report1.p_params or report0.n_eff != report1.n_eff:
        raise DimensionMismatch(
            "BIC_HES difference equals 2 log BF only for equal p and n; "
            "use the Laplace log Bayes factor instead")
    return _exp_half(report1.bic_hes - report0.bic_hes)


def log_bf_hierarchical(p: int, r0: int, r1: int, s0: float, s1: float) -> float:
    """(p+1) log(r1/r0) + (p+2) log(s0/s1) for two balanced normal-means fits."""
    if min(p, r0, r1, s0, s1) <= 0:
        raise DomainError("all arguments must be positive")
    return (p + 1) * math.log(r1 / r0) + (p + 2) * math.log(s0 / s1)


class Strength(enum.Enum):
    WEAK = "weak"
    POSITIVE = "positive"
    STRONG = "strong"
    VERY_STRONG = "very strong"


@dataclass(frozen=True)
class Evidence:
    strength: Strength
    favors: str  # "H0" or "H1"

    def __str__(self):
        return f"{self.strength.value} evidence for {self.favors}"


def interpret_bf(bf: float) -> Evidence:
    """Raftery's scale: [1,3) weak, [3,20) positive, [20,150] strong, >150 very strong.
    BF_{0,1} < 1 is read as 1/BF in favour of H1."""
    if not bf >= 0:
        raise DomainError("a Bayes factor must be >= 0")
    favors = "H0"
    if bf < 1:
        bf = math.inf if bf == 0 else 1.0 / bf
        favors = "H1"
    if bf < 3:
        s = Strength.WEAK
    elif bf < 20:
        s = Strength.POSITIVE
    elif bf <= 150:
        s = Strength.STRONG
    else:
        s = Strength.VERY_STRONG
    return Evidence(s, favors)


def select_model(reports: Sequence[CriteriaReport], kind: CriterionKind) -> int:
    """Index of the smallest criterion value; ties go to fewer parameters,
    then to the earlier candidate."""
    if not reports:
        raise PreconditionError("no candidates")
    kind = CriterionKind(kind)
    keys = []
    for i, rep in enumerate(reports):
        v = rep.value(kind)
        if v is None or not math.isfinite(v):
            raise UndefinedCriterion(i, kind.value)
        keys.append((v, rep.p_params, i))
    return min(keys)[2]
