"""Exception hierarchy shared by all modules."""


class MinimaxFlowError(Exception):
    """Base class for every error raised by the package."""


class InvalidNetwork(MinimaxFlowError, ValueError):
    pass


class NotATree(InvalidNetwork):
    pass


class ImbalancedCommodity(MinimaxFlowError, ValueError):
    pass


class NotAnEdge(MinimaxFlowError, KeyError):
    pass


class Infeasible(MinimaxFlowError):
    """Raised (or carried as a status) when a minimax program has no solution."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class UnstableStep(MinimaxFlowError, ValueError):
    pass


class StepTooLarge(MinimaxFlowError, ValueError):
    pass


class NewtonDivergence(MinimaxFlowError, RuntimeError):
    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class InfeasibleSynchronization(MinimaxFlowError):
    pass


class ConfigInvalid(MinimaxFlowError, ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvalidCounts(MinimaxFlowError, ValueError):
    pass
