"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TerrainSGError(Exception):
    """Base class for every error raised by this package."""


class EmbeddingError(TerrainSGError, ValueError):
    pass


class DimensionMismatchError(EmbeddingError):
    pass


class ZeroNormError(EmbeddingError):
    pass


class ConfigError(TerrainSGError, ValueError):
    pass


class DatasetError(TerrainSGError):
    """Raised by the dataset loader. ``record`` names the offending entry."""

    def __init__(self, message: str, record: str | None = None):
        self.record = record
        if record is not None:
            message = f"{record}: {message}"
        super().__init__(message)


class MissingFileError(DatasetError):
    pass


class SchemaError(DatasetError):
    pass


class DanglingReferenceError(DatasetError):
    pass


class EmbeddingDimensionError(DatasetError):
    pass


class MonotonicityError(DatasetError):
    pass


class MaskOverlapError(DatasetError):
    pass


class FormatVersionError(DatasetError):
    pass


class GridError(TerrainSGError, ValueError):
    pass


class MissingHierarchyError(TerrainSGError):
    pass


class UnreachableError(TerrainSGError):
    """No path exists. ``reason`` is ``"prohibited"`` or ``"disconnected"``."""

    def __init__(self, message: str, reason: str):
        self.reason = reason
        super().__init__(message)


class ProhibitedUnreachableError(UnreachableError):
    def __init__(self, message: str):
        super().__init__(message, "prohibited")


class DisconnectedUnreachableError(UnreachableError):
    def __init__(self, message: str):
        super().__init__(message, "disconnected")


class NoGoalError(TerrainSGError):
    pass
