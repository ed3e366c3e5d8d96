"""Exception types shared across the package."""


class McdkError(Exception):
    """Base class for all package errors."""


class DimensionError(McdkError):
    """Shape or axis mismatch; the message names the offending axis."""


class ConfigError(McdkError):
    """Invalid configuration value or scene/training config file."""


class DataError(McdkError):
    """Malformed or missing on-disk data (TNS files, frame bundles)."""


class AutodiffError(McdkError):
    """Misuse of the recording/backward machinery."""


class TrainingError(McdkError):
    """Unrecoverable failure during optimization (e.g. NaN loss)."""
