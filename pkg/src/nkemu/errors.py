"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` and numerical
breakdowns from :class:`NumericalError`; the command line maps the two
families onto distinct exit codes.
"""


class NkemuError(Exception):
    """Base class for all package errors."""


class ValidationError(NkemuError, ValueError):
    """Inputs violate a documented precondition."""


class NumericalError(NkemuError, ArithmeticError):
    """A numerical procedure broke down."""


# -- validation -------------------------------------------------------------

class ShapeMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class CountMismatch(ValidationError):
    pass


class MissingFixedData(ValidationError):
    pass


class UnsupportedKind(ValidationError):
    pass


class UnsupportedFamilyForGrid(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NonPositiveConductivity(ValidationError):
    pass


class ZeroResidual(ValidationError):
    pass


class SingularOnConstants(ValidationError):
    pass


# -- numerical --------------------------------------------------------------

class NotPositiveDefinite(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class SingularKM(NumericalError):
    pass


class NonFiniteResidual(NumericalError):
    pass


class NonFiniteUpdate(NumericalError):
    pass


class Diverged(NumericalError):
    """Residual grew beyond the divergence guard.

    The partial trace, when available, is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class StallDetected(NumericalError):
    pass


class KantorovichViolated(NumericalError):
    pass


class ForcingExceedsOne(NumericalError):
    pass
