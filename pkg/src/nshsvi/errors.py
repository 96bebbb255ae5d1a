"""Exception types shared across the package."""


class NsHsviError(Exception):
    """Base class for all solver errors."""


class ModelError(NsHsviError):
    """A model file could not be parsed or failed validation."""


class DimensionMismatch(NsHsviError):
    pass


class EmptyPolytope(NsHsviError):
    pass


class DegeneratePolytope(NsHsviError):
    pass


class NumericalFailure(NsHsviError):
    pass


class DomainUnbounded(NsHsviError):
    pass


class PieceBudgetExceeded(NsHsviError):
    pass


class IncompatibleState(NsHsviError):
    """The environment point does not produce the claimed percept."""


class NoRegion(NsHsviError):
    """No region of a partition contains the query point."""


class ZeroProbabilityObservation(NsHsviError):
    pass


class AgentStateMismatch(NsHsviError):
    pass


class NoPointsForAgentState(NsHsviError):
    pass


class InfeasibleDominance(NsHsviError):
    pass


class StateNotInSupport(NsHsviError):
    pass


class LimitReached(NsHsviError):
    """Raised when a solve stops on a time or iteration limit.

    The partial result is attached as ``result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
