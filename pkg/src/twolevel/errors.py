"""Exception types shared across the package."""


class TwoLevelError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(TwoLevelError):
    """Array shapes or lengths do not agree with the declared block sizes."""


class NonFiniteCoefficient(TwoLevelError):
    """A cost or constraint coefficient is NaN or infinite."""


class BoundOrderViolation(TwoLevelError):
    """A lower bound exceeds the matching upper bound."""


class IndivisibleHorizon(TwoLevelError):
    """The group size does not divide the number of second-stage variables."""


class IndivisibleRows(TwoLevelError):
    """The row-group size does not divide the number of coupling rows."""


class SelectionConstraintViolated(TwoLevelError):
    """A coarse point breaks the profile-selection constraints."""


class DeltaMismatch(TwoLevelError):
    """Profile length and partition group size disagree."""


class InvalidProfile(TwoLevelError):
    """A profile library breaks one of its validity invariants."""


class BadRowIndex(TwoLevelError):
    """A fine-row index is outside the semi-coarse coupling-row range."""


class BackendFailure(TwoLevelError):
    """The solver backend reported an error or an unusable status."""

    def __init__(self, message, outcome=None, phase=None, iteration=None):
        super().__init__(message)
        self.outcome = outcome
        self.phase = phase
        self.iteration = iteration


class Unbounded(BackendFailure):
    """The model is unbounded."""


class Infeasible(BackendFailure):
    """The model is infeasible."""


class TimeLimitWithGap(TwoLevelError):
    """A time limit was hit; the best incumbent is attached, flagged."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class BackendUnavailable(TwoLevelError):
    """The requested solver backend is not installed."""


class ModelTranslationError(TwoLevelError):
    """The model could not be translated for the backend."""


class InvalidInstance(TwoLevelError):
    """A cogeneration instance breaks one of its parameter invariants."""


class HorizonMismatch(TwoLevelError):
    """Solution schedules do not match the instance horizon."""


class InvalidProfilePool(TwoLevelError):
    """A cogeneration profile pool breaks its validity invariants."""


class WindowSolveFailed(TwoLevelError):
    """A moving-horizon window solve did not return a usable solution."""

    def __init__(self, message, window_index=None):
        super().__init__(message)
        self.window_index = window_index


class EmptyPool(TwoLevelError):
    """Profile selection was asked to pick from an empty pool."""


class EmptyFamily(TwoLevelError):
    """Extreme-profile selection was asked for an empty family."""


class PoolTooSmall(TwoLevelError):
    """k-means selection needs at least k profiles."""


class NonBinaryInput(TwoLevelError):
    """A vector expected to be binary has a non-binary element."""
