"""Exception types shared across the package, mapped to CLI exit codes."""


class ConfigError(Exception):
    """Bad configuration: unknown field, out-of-range value, malformed file."""


class DataIntegrityError(Exception):
    """Corpus or checkpoint on disk is missing, inconsistent, or corrupted."""


class NumericError(Exception):
    """Training produced a non-finite loss."""
