"""Exception hierarchy shared across the package."""


class AeGuardError(Exception):
    """Base class for every error raised by aeguard."""


class ShapeError(AeGuardError, ValueError):
    pass


class DomainError(AeGuardError, ValueError):
    pass


class ConfigError(AeGuardError, ValueError):
    pass


class DataError(AeGuardError, ValueError):
    pass


class NumericError(AeGuardError, ArithmeticError):
    pass


class StateError(AeGuardError, RuntimeError):
    pass


class FormatError(AeGuardError, ValueError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    pass


class IntegrityError(AeGuardError, ValueError):
    """File parsed but its contents are mutually inconsistent."""


class ParseError(AeGuardError, ValueError):
    """Malformed or truncated binary payload.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
