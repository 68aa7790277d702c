"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid scenario or model configuration.

    ``key`` names the offending configuration entry when there is one.
    """

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class DimensionError(ValueError):
    """Array shapes or sizes are inconsistent or out of range."""


class UnderdeterminedError(DimensionError):
    """A least-squares system has fewer equations than unknowns."""
