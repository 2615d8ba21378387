"""Exception and warning types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs or configuration values are out of range."""


class SolverError(RuntimeError):
    """Raised when a linear solve or eigensolve fails."""


class ControlError(RuntimeError):
    """Raised when a control synthesis violates one of its guarantees."""


class BlindSubspaceWarning(UserWarning):
    """A spectral subspace is (numerically) invisible on the observation region."""


class RegularizationWarning(UserWarning):
    """A Gram matrix was regularized or truncated because of conditioning."""
