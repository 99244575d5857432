"""Exception types shared across the toolkit."""


class DataError(ValueError):
    """Input data violates a format or invariant."""


class ConfigError(ValueError):
    """A configuration file or option is invalid."""


class TrainingError(RuntimeError):
    """Optimization diverged or could not proceed."""
