"""Exception hierarchy shared across the library."""


class ShapeError(ValueError):
    """Tensor extents do not admit the requested operation."""


class StateError(RuntimeError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class DivergenceError(NumericError):
    """Training loss stayed non-finite across consecutive evaluations."""


class SearchError(RuntimeError):
    """Learning-rate search could not produce a usable candidate."""


class ParseError(ValueError):
    """A dataset file is malformed (bad magic, truncation, misalignment)."""


class DataError(ValueError):
    """Input data violates a precondition (e.g. empty corpus)."""


class ConfigError(ValueError):
    """A configuration value is out of its documented range."""


class CheckpointError(ValueError):
    """A checkpoint file could not be loaded."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported by this build."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint file ended before the declared payload."""
