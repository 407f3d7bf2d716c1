"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value (bad field, out-of-range parameter)."""


class DatasetFormatError(ValueError):
    """Malformed dataset file; message names the offending line."""


class DegenerateGmmError(ValueError):
    """Mixture fit impossible: fewer than two distinct finite values."""
