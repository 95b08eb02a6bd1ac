"""Exception types shared across the package."""


class BoshnasError(Exception):
    """Base class for package-specific errors."""


class EnumerationCapError(BoshnasError):
    """Raised when a space is too large to materialize under the given cap."""


class InvalidCardError(BoshnasError):
    """Raised when an operation receives a structurally broken model card."""


class CyclicGraphError(BoshnasError):
    """Raised when a computational graph that must be acyclic contains a cycle."""


class UnknownHashError(BoshnasError, KeyError):
    """Raised when a graph hash is not present in a table or library."""


class UnknownLabelError(BoshnasError, KeyError):
    """Raised when a block label is missing from the edit-cost ranking."""


class DivergenceError(BoshnasError):
    """Raised when an iterative fit produces non-finite losses."""


class SearchExhaustedError(BoshnasError):
    """Raised when a search needs an untrained candidate but none remain."""


class SimShapeError(BoshnasError):
    """Raised on internal shape mismatches in the encoder simulator."""


class ProtocolError(BoshnasError):
    """Raised on malformed evaluation-protocol payloads."""
