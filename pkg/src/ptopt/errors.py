"""Exception types shared across the package.

The CLI maps these onto process exit codes, so keep the hierarchy flat:
anything wrong with input data is a DataError, anything wrong with the
arithmetic of a run is a NumericError.
"""


class DataError(ValueError):
    """Input data violates a documented contract (bad price, bad schema, ...)."""


class ParseError(DataError):
    """A file could not be parsed; message carries the offending line."""


class AlignmentError(DataError):
    """Weight dates and return dates do not line up day by day."""


class NumericError(RuntimeError):
    """A numeric procedure failed (singular system, non-finite value, ...)."""


class TrainingError(NumericError):
    """Training aborted; message names the offending epoch/batch."""
