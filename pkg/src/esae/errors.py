"""Exception hierarchy shared across the package."""


class EsaeError(Exception):
    """Base class for all package errors."""


class InputDomainError(EsaeError, ValueError):
    """A value lies outside the domain an operation accepts."""


class ConfigurationError(EsaeError, ValueError):
    pass


class StateError(EsaeError, RuntimeError):
    pass


class FormatError(EsaeError, ValueError):
    """Malformed encrypted frame or wire bytes."""


class BadMagicError(FormatError):
    pass


class UnknownVersionError(FormatError):
    pass


class TruncationError(FormatError):
    pass


class ProtocolError(EsaeError):
    """Peer sent something the protocol cannot accept."""
