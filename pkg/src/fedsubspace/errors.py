"""Exception types shared across the package."""


class FedSubspaceError(Exception):
    """Base class for every error this package raises deliberately."""


class ConfigError(FedSubspaceError):
    """A parameter or configuration value is outside its valid range."""


class DataError(FedSubspaceError):
    """Input data violates a precondition (NaNs, inconsistent labels, ...)."""


class FormatError(FedSubspaceError):
    """A file does not conform to its expected on-disk format."""


class ShapeError(FedSubspaceError):
    """Array arguments have inconsistent shapes."""


class NumericsError(FedSubspaceError):
    """A computation produced non-finite values or failed to converge."""
