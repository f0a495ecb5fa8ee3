"""Exception hierarchy shared by every module."""


class CritsysError(Exception):
    """Base class for all errors raised by critsys."""


class DomainError(CritsysError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ConfigurationError(CritsysError, ValueError):
    """Invalid model, coupling or run configuration."""


class ShapeError(CritsysError, ValueError):
    """Grids, fields or couplings of incompatible sizes."""


class NumericError(CritsysError, ArithmeticError):
    """A numerical procedure produced non-finite values or failed."""


class SolverError(NumericError):
    """A linear or nonlinear solve could not proceed (e.g. singular Jacobian)."""
