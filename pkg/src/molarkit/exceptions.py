"""Exception and warning types raised across the package."""


class MolarError(Exception):
    """Base class for all package errors."""


class SingularDesign(MolarError, ValueError):
    """Design matrix is rank deficient, or has fewer rows than columns."""

    def __init__(self, message, task_id=None):
        super().__init__(message)
        self.task_id = task_id


class EmptyInput(MolarError, ValueError):
    pass


class NonPositiveSize(MolarError, ValueError):
    pass


class InvalidTrim(MolarError, ValueError):
    pass


class InsufficientDegreesOfFreedom(MolarError, ValueError):
    pass


class InvalidHorizon(MolarError, ValueError):
    pass


class ShapeMismatch(MolarError, ValueError):
    pass


class MalformedCsv(MolarError, ValueError):
    pass


class MissingColumn(MolarError, KeyError):
    pass


class TooFewRows(MolarError, ValueError):
    pass


class InfeasibleRescale(MolarError, ValueError):
    pass


class ConfigError(MolarError, ValueError):
    pass


class NoConvergence(MolarError, RuntimeError):
    pass


class NoConvergenceWarning(RuntimeWarning):
    """An iterative solver stopped at its iteration cap; the best iterate is returned."""
