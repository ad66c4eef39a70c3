"""Exception types raised across the package."""


class BudgetAllocError(Exception):
    """Base class for all package errors."""


class ValidationError(BudgetAllocError, ValueError):
    """Input violates a documented precondition or invariant."""


# data
class MissingColumn(ValidationError):
    pass


class ParseError(ValidationError):
    """Rows that could not be parsed; ``rows`` holds their 1-based line numbers."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)

    @property
    def count(self):
        return len(self.rows)


class NonBinaryResponse(ValidationError):
    pass


class NegativeCost(ValidationError):
    pass


class TreatmentOutOfRange(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class ZeroFeatureDim(ValidationError):
    pass


# synthgen
class InvalidK(ValidationError):
    pass


# allocator
class ShapeMismatch(ValidationError):
    pass


class NegativeAlpha(ValidationError):
    pass


class InstanceTooLarge(ValidationError):
    pass


class Infeasible(BudgetAllocError):
    """No allocation satisfies the budget."""


class InfeasibleBudget(BudgetAllocError):
    """Even at ``alpha_max`` the matched per-capita cost exceeds the budget."""


# gradest
class InvalidParams(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


# slearner
class NonFiniteActivation(BudgetAllocError, FloatingPointError):
    pass


# metrics
class NotTwoTreatments(ValidationError):
    pass


class DegenerateCurve(ValidationError):
    pass


# cli
class ConfigError(ValidationError):
    pass
