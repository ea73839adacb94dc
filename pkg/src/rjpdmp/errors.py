"""Exception types raised by the samplers."""


class RJPDMPError(Exception):
    """Base class for sampler errors."""


class ContractViolation(RJPDMPError, ValueError):
    """An operation was called on a state that breaks its precondition."""


class NumericalError(RJPDMPError, FloatingPointError):
    """A non-finite gradient or rate was produced.

    The offending sampler state is kept on ``state`` for post-mortem use.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ThinningBoundError(RJPDMPError):
    """The true event rate exceeded its dominating bound.

    This is always a bug in a bound construction, never a user error.
    """

    def __init__(self, message, state=None, rate=None, bound=None):
        super().__init__(message)
        self.state = state
        self.rate = rate
        self.bound = bound
