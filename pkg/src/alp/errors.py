"""Exception hierarchy shared by all mechanisms."""


class AlpError(Exception):
    """Base class for errors raised by this package."""


class DomainError(AlpError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(AlpError, ValueError):
    """Mechanism parameters are inconsistent with each other or with the input."""


class ResourceError(AlpError, MemoryError):
    """The requested computation would materialize an unreasonably large object."""


class FormatError(AlpError, ValueError):
    """A serialized blob is malformed or has an unsupported version."""
