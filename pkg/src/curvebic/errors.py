"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (a ``ValueError``),
numerical problems from :class:`NumericalError`. The CLI maps the first
family to exit code 1 and the second to exit code 2.
"""


class CurvebicError(Exception):
    """Base class for all package errors."""


class ValidationError(CurvebicError, ValueError):
    pass


class NumericalError(CurvebicError, ArithmeticError):
    pass


# -- dataset validation -----------------------------------------------------

class MissingColumn(ValidationError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"missing column {column!r}")


class NonFiniteValue(ValidationError):
    def __init__(self, row, column):
        self.row, self.column = row, column
        super().__init__(f"non-finite value in row {row}, column {column!r}")


class EmptyGroup(ValidationError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"group {label!r} has no rows")


class DuplicateColumnName(ValidationError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"duplicate column name {column!r}")


class PreconditionError(ValidationError):
    pass


class DomainError(ValidationError):
    pass


# -- fitting ----------------------------------------------------------------

class RankDeficientDesign(NumericalError):
    pass


class DegenerateFit(NumericalError):
    pass


class UnbalancedGroups(ValidationError):
    pass


class NonConvergence(NumericalError):
    def __init__(self, iterations, last_loglik, msg=None):
        self.iterations, self.last_loglik = iterations, last_loglik
        super().__init__(msg or f"no convergence after {iterations} iterations "
                                f"(last loglik {last_loglik:.10g})")


class SingularMarginalCovariance(NumericalError):
    pass


class InnerModeFailure(NumericalError):
    def __init__(self, group):
        self.group = group
        super().__init__(f"inner mode search failed for group {group}")


class CompleteSeparation(NumericalError):
    pass


# -- curvature / criteria ---------------------------------------------------

class EvaluationFailure(NumericalError):
    def __init__(self, point):
        self.point = point
        super().__init__("log-likelihood is not finite at a stencil point")


class NotPositiveDefinite(NumericalError):
    def __init__(self, min_eigenvalue):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"information matrix is not positive definite "
                         f"(min eigenvalue {min_eigenvalue:.6g})")


class SingularInformation(NumericalError):
    pass


class DimensionMismatch(ValidationError):
    pass


class UndefinedCriterion(ValidationError):
    def __init__(self, index, kind=None):
        self.index, self.kind = index, kind
        super().__init__(f"criterion {kind} undefined for candidate {index}")


# -- bayes / simulation -----------------------------------------------------

class SaddlePoint(NumericalError):
    pass


class StuckChain(NumericalError):
    def __init__(self, acceptance_rate):
        self.acceptance_rate = acceptance_rate
        super().__init__(f"chain acceptance rate {acceptance_rate:.4f} < 0.01")


class NonFinitePointwiseLikelihood(NumericalError):
    def __init__(self, i, j):
        self.i, self.j = i, j
        super().__init__(f"non-finite pointwise log-likelihood for "
                         f"observation {i}, draw {j}")


class PoissonOverflow(NumericalError):
    pass
