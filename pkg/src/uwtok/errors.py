"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/validation/data/format
problems exit 2, non-finite training aborts exit 3.
"""


class UwtokError(Exception):
    pass


class ConfigError(UwtokError):
    """Invalid configuration: bad key, bad value, contradictory flags."""


class ValidationError(UwtokError):
    """Runtime input violates an operation's precondition."""


class DataError(UwtokError):
    """Missing or unreadable data: empty corpus, unknown sample key."""


class FormatError(UwtokError):
    """Malformed serialized artifact (token file, checkpoint, store)."""


class TrainingError(UwtokError):
    """Training aborted; message names the failing term and step."""
