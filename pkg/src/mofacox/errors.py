"""Exception types raised by the pipeline."""


class MofaCoxError(Exception):
    """Base class for package errors."""


class NoEventsError(MofaCoxError, ValueError):
    """The dataset (or a subset of it) contains no observed events."""


class TiedEventTimesError(MofaCoxError, ValueError):
    """Two or more events share the same observed time."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


class LinearPredictorOverflow(MofaCoxError, FloatingPointError):
    """A linear predictor exceeded the allowed magnitude."""


class DegenerateInformationError(MofaCoxError, ArithmeticError):
    """The estimated information matrix is not positive definite."""

    def __init__(self, message, min_eigenvalue=float("nan")):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class InfeasibleProjectionError(MofaCoxError, RuntimeError):
    """The Dantzig-type projection problem has no solution at the given level."""

    def __init__(self, message, best_residual=float("nan")):
        super().__init__(message)
        self.best_residual = best_residual


class StageError(MofaCoxError, RuntimeError):
    """Wraps a failure inside one stage of the test pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
