"""Exception types raised by the public API."""


class ShapeMismatchError(ValueError):
    """Operand shapes or extents are incompatible with the requested operation."""


class InvalidAxisError(ValueError):
    """An axis index is out of range or repeated within one operand."""


class ZeroNormError(ValueError):
    """A vector with (near-)zero norm was passed where a direction is required."""


class InvalidPlanError(ValueError):
    """A factorization plan violates its structural invariants."""


class TapeError(RuntimeError):
    """Backward was asked to run on a detached node or a non-scalar loss."""


class ConfigError(ValueError):
    """A run configuration failed schema validation."""


class DatasetError(ValueError):
    """A dataset file is missing, malformed, or empty where data is required."""


class SeparationError(RuntimeError):
    """Prototype generation could not satisfy the pairwise-angle floor."""


class DivergenceError(RuntimeError):
    """A training loss became non-finite."""
