"""Exception and warning classes shared across the package."""


class InvalidArgumentError(ValueError):
    pass


class GeometryInfeasibleError(ValueError):
    pass


class DomainError(ValueError):
    pass


class SingularityError(ValueError):
    """Green's function requested at coincident points."""


class MetricUndefinedError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class SolverError(RuntimeError):
    """Linear solve failed or did not reach the residual target."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class AccuracyError(ValueError):
    """k*h too large for the small-cell expansion (strict mode)."""


class AccuracyWarning(UserWarning):
    pass


class ExtrapolationWarning(UserWarning):
    pass


class DegenerateKernelWarning(UserWarning):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
