"""Exception types raised across the package."""


class CoxImputeError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class ParameterError(CoxImputeError, ValueError):
    pass


class ShapeError(CoxImputeError, ValueError):
    pass


class NoEventsError(CoxImputeError):
    pass


class SingularError(CoxImputeError):
    pass


class ConvergenceError(CoxImputeError):
    """Newton iterations exhausted; ``beta`` holds the last iterate."""

    def __init__(self, message, beta=None, n_iter=None):
        super().__init__(message)
        self.beta = beta
        self.n_iter = n_iter


class UnusableColumnError(CoxImputeError):
    pass


class EmptyFilterError(CoxImputeError):
    pass


class DegenerateWeightsError(CoxImputeError):
    def __init__(self, message, subjects=()):
        super().__init__(message)
        self.subjects = tuple(subjects)


class DegenerateError(CoxImputeError):
    pass


class ParseError(CoxImputeError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(CoxImputeError):
    pass


class PipelineError(CoxImputeError):
    """Wraps an error raised inside a pipeline task with its location."""

    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = dict(context or {})
