"""Exception types shared across the package."""


class GraspNetError(Exception):
    """Base class for all package errors."""


class InvalidShapeError(GraspNetError, ValueError):
    pass


class NonFiniteError(GraspNetError, FloatingPointError):
    """An op produced or received NaN/Inf values."""


class CorruptFileError(GraspNetError, ValueError):
    pass


class PreconditionError(GraspNetError, ValueError):
    pass


class PlacementError(GraspNetError, RuntimeError):
    """No valid block placement found within the resample budget."""


class IntegrityError(GraspNetError, RuntimeError):
    """Training data leaked from a task that must stay held out."""


class NotFoundError(GraspNetError, KeyError):
    pass
