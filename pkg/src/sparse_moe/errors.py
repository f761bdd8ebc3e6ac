"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not line up with the model dimensions."""


class ConfigError(ValueError):
    """Invalid hyperparameter or command configuration."""


class DataError(ValueError):
    """Malformed or unusable input data."""


class SolverError(RuntimeError):
    """The inner optimizer failed to make progress."""


class TrainingError(RuntimeError):
    """Training produced a non-finite or otherwise unusable state."""
