"""Error taxonomy shared across the package."""


class SpotError(Exception):
    """Base class for user-facing errors (CLI exit code 1)."""


class DimensionError(SpotError):
    """Tensor shapes disagree with an operation's contract."""


class ConfigError(SpotError):
    """Invalid configuration value or inconsistent model setup."""


class InputError(SpotError):
    """Argument outside an operation's documented domain."""


class UsageError(SpotError):
    """API called out of order (e.g. stepping without gradients)."""


class ParseError(SpotError):
    """Malformed file content; message names the offending location."""


class ValidationError(SpotError):
    """Loaded data violates a dataset invariant; message names the record."""


class DataIOError(SpotError):
    """Missing or unreadable file; message names the path."""
