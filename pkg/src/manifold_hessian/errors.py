"""Exception hierarchy.

Two families matter to callers: :class:`ValidationError` (bad input,
CLI exit status 2) and :class:`NumericalError` (a computation that could
not produce a trustworthy answer, CLI exit status 3).
"""


class ManifoldHessianError(Exception):
    """Base class for all package errors."""


class ValidationError(ManifoldHessianError, ValueError):
    """Invalid input or configuration."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ParseError(ValidationError):
    """Malformed configuration text."""


class NumericalError(ManifoldHessianError, ArithmeticError):
    """A numerical routine failed or produced an untrustworthy result."""


# manifold models
class OutOfChart(ValidationError):
    pass


class NotOnManifold(ValidationError):
    pass


class FrameNotTangent(ValidationError):
    pass


class UnsupportedField(ValidationError):
    pass


class RejectionStall(NumericalError):
    pass


# estimator
class RankDeficient(NumericalError):
    pass


class TooFewNeighbors(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class BadLength(ValidationError):
    pass


class DegenerateOverlap(NumericalError):
    pass


# moment oracles
class UnsupportedPattern(ValidationError):
    pass


class QuadratureNotConverged(NumericalError):
    pass


class NotSymmetric(ValidationError):
    pass


class MissingCurvatureData(ValidationError):
    pass


# experiments
class EmptyNeighborhood(NumericalError):
    pass


class NonPositiveError(NumericalError):
    pass
