"""Exception types shared across the package."""


class VlmGuardError(Exception):
    """Base class for all package errors."""


class InvalidInput(VlmGuardError, ValueError):
    """An argument violates an operation's precondition."""


class ParseError(VlmGuardError, ValueError):
    """A file or config value could not be parsed."""
