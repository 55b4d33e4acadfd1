"""Exception hierarchy shared by every module."""


class ERSIError(Exception):
    """Base class for all package errors."""


class ValidationError(ERSIError, ValueError):
    """A precondition on inputs or configuration does not hold."""


class SingularPointError(ValidationError):
    """Kernel evaluated at (or numerically at) its source point."""


class OutOfBandError(ValidationError):
    """Frequency point outside the open ball |xi| < 2 kappa_s."""


class GeometryError(ValidationError):
    """Source support is not strictly inside the observation sphere."""


class NumericalError(ERSIError, ArithmeticError):
    """Singular or ill-conditioned linear system."""


class FormatError(ERSIError, IOError):
    """Malformed or mismatched binary file."""


class HeaderMismatchError(ValidationError):
    """Parameters stored in a file disagree with the run configuration."""
