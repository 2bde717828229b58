"""Exception hierarchy shared by all surfho modules."""


class SurfhoError(Exception):
    """Base class for all package errors."""


class DomainError(SurfhoError, ValueError):
    """An argument is outside the physical or numerical domain of an operation."""


class ProtocolError(SurfhoError):
    """A handover state machine received an event that is illegal in its state."""


class ConfigError(SurfhoError):
    """A scenario or CLI configuration is syntactically or semantically invalid."""


class CodebookError(SurfhoError):
    """A codebook file is malformed, truncated, or bound to a different geometry."""
