"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: configuration and usage
problems exit 2, I/O and file-format problems exit 3, numerical failures
exit 4.
"""


class ShapeError(ValueError):
    """An array has the wrong dimensionality or mismatched dimensions."""


class DegenerateInputError(ValueError):
    """Input is too small or too degenerate for the requested operation."""


class EmptyInputError(ValueError):
    """An operation that needs at least one element received none."""


class StratificationError(ValueError):
    """A class has too few trials to be split across train/val/test."""


class ConfigError(ValueError):
    """A configuration value violates its contract."""


class StreamFormatError(ValueError):
    """A stream file on disk is malformed.

    ``offset`` is the byte position at which the problem was detected,
    or -1 when the problem is not tied to a position (e.g. manifest
    inconsistencies).
    """

    def __init__(self, message: str, offset: int = -1):
        super().__init__(message if offset < 0 else f"{message} (at byte {offset})")
        self.offset = offset


class UndefinedMetricError(ValueError):
    """A metric is not defined for this input (e.g. BWT on one subject)."""


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""
