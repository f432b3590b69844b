"""Exception types shared by the modules."""


class ConelpError(Exception):
    """Base class."""


class DomainError(ConelpError, ValueError):
    """Input outside the admissible parameter range."""


class PreconditionError(ConelpError, ValueError):
    pass


class ConvergenceError(ConelpError, RuntimeError):
    """A discrete solve did not reach its tolerance."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class BracketError(ConelpError, RuntimeError):
    def __init__(self, msg, samples=None):
        super().__init__(msg)
        self.samples = samples


class SingularityError(ConelpError, ValueError):
    pass
