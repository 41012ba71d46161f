"""Exception and warning types shared across the package."""


class LatmemError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LatmemError, ValueError):
    """Input violates a documented precondition (shape, finiteness, geometry)."""


class EmptyInputError(InvalidInputError):
    """An operation that requires at least one element received none."""


class UndefinedSimilarityError(LatmemError):
    """Global similarity requested on a bank with fewer than two units."""


class InvariantViolation(LatmemError):
    """A runtime invariant check failed during execution (CLI exit code 3)."""


class ConfigError(LatmemError):
    """Configuration file failed validation (CLI exit code 2)."""

    def __init__(self, message: str, *, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SnapshotError(LatmemError):
    """Base class for snapshot load/save failures."""


class SnapshotParseError(SnapshotError):
    """Snapshot file is not valid JSON or lacks required fields."""


class SnapshotVersionError(SnapshotError):
    """Snapshot format version is not supported."""


class SnapshotShapeError(SnapshotError):
    """Snapshot payload shapes disagree with their declared dimensions."""


class ZeroVectorWarning(UserWarning):
    """Cosine similarity saw a zero vector; result defined as 0."""
