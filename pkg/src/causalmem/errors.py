"""Exception hierarchy shared by every stage of the memory engine."""

from __future__ import annotations


class MemoryEngineError(Exception):
    """Base class for all engine errors."""

    exit_code = 2


class ConfigError(MemoryEngineError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ValidationError(MemoryEngineError, ValueError):
    pass


# -- providers ---------------------------------------------------------------


class ProviderError(MemoryEngineError):
    exit_code = 1


class TransportError(ProviderError):
    """Network or endpoint failure. Retryable."""


class ProviderRefusal(ProviderError):
    """The provider answered but declined the request. Not retryable."""


class ReplayMiss(ProviderError):
    """A replay cassette does not contain the requested call."""


class DimensionMismatch(MemoryEngineError, ValueError):
    pass


class NonFiniteScore(ProviderError):
    pass


class ZeroVector(MemoryEngineError, ValueError):
    pass


class MalformedReply(MemoryEngineError):
    def __init__(self, message: str, reply: str = ""):
        self.reply = reply
        super().__init__(message)


# -- graph / retrieval -------------------------------------------------------


class EmptyGraph(MemoryEngineError):
    pass


class UnresolvableEvidence(MemoryEngineError, ValueError):
    pass


# -- persistence -------------------------------------------------------------


class PersistenceError(MemoryEngineError):
    exit_code = 3


class IoError(PersistenceError):
    exit_code = 2


class SerializationError(PersistenceError):
    pass


class VersionMismatch(PersistenceError):
    pass


class CorruptFile(PersistenceError):
    def __init__(self, path: str, location: str, message: str):
        self.path = path
        self.location = location
        super().__init__(f"{path} [{location}]: {message}")


class IntegrityError(PersistenceError):
    pass
