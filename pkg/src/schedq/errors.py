"""Exception types raised across the package."""


class ConfigError(ValueError):
    """An environment, suite, network or training configuration is invalid."""


class IllegalActionError(ValueError):
    """The requested user cannot be served in the current state."""


class NoActionError(RuntimeError):
    """A policy was asked to act in a terminal state."""


class OracleInfeasibleError(RuntimeError):
    """Exhaustive search would exceed its node budget."""


class UnsupportedConfigError(ValueError):
    """The oracle only handles static (zero-drift) environments."""


class TrainingDivergedError(RuntimeError):
    """A parameter update or batch loss became non-finite."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class CheckpointFormatError(ValueError):
    """A checkpoint or replay-buffer file is corrupt or truncated."""


class UndefinedMetricError(ZeroDivisionError):
    """The advantage metric is undefined for a zero agent reward."""
