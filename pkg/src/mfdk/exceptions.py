"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Matrix or signal dimensions do not fit together."""


class DivergedError(RuntimeError):
    """A rollout exceeded the state-norm guard (unstable interconnection)."""


class UnstableLoopError(RuntimeError):
    """A norm was requested for an interconnection that is not stable."""


class GammaInfeasibleError(RuntimeError):
    """The requested performance level is at or below what is achievable."""


class InsufficientExcitationError(RuntimeError):
    """The least-squares regression is rank deficient."""


class GradientEvaluationError(RuntimeError):
    """An objective evaluation inside a finite-difference gradient failed."""

    def __init__(self, coordinate: int, message: str):
        super().__init__(f"objective evaluation failed at coordinate {coordinate}: {message}")
        self.coordinate = coordinate


class SynthesisAborted(RuntimeError):
    """A K-step could not proceed; carries the last good state and the partial trace."""

    def __init__(self, message: str, K=None, d=None, trace=None):
        super().__init__(message)
        self.K = K
        self.d = d
        self.trace = trace
