"""Exception hierarchy shared across the package."""


class IvInvertError(Exception):
    """Base error for this package."""


class DataError(IvInvertError, ValueError):
    """Input data violates a contract: missing columns, rank deficiency, bad shapes."""


class FitError(IvInvertError):
    """Rational or polynomial coefficient recovery failed its residual check."""


class RootFindingError(IvInvertError):
    """A root enumeration stage failed or stalled; carries the offending context."""


class QuadratureError(IvInvertError):
    """Numerical integration did not reach the requested tolerance."""


class NumericalError(IvInvertError):
    """Generic numerical failure: singular matrices, non-PD covariance, overflow."""
