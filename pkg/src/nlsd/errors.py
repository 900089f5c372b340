"""Exception types shared across the package."""


class NlsdError(Exception):
    """Base class for all package errors."""


class InvalidEdge(NlsdError):
    pass


class MissingLabels(NlsdError):
    pass


class EmptyGraph(NlsdError):
    pass


class InvalidK(NlsdError):
    pass


class InvalidProbability(NlsdError):
    pass


class ShapeError(NlsdError):
    pass


class NotScalar(NlsdError):
    pass


class IncompleteSheaf(NlsdError):
    pass


class TooLarge(NlsdError):
    pass


class InvalidNorm(NlsdError):
    pass


class NoPotential(NlsdError):
    pass


class NonSmoothPoint(NlsdError):
    """A finite-difference probe landed on a gating discontinuity."""


class EmptyMask(NlsdError):
    pass


class ParseError(NlsdError):
    pass


class TooFewNodes(NlsdError):
    pass


class Diverged(NlsdError):
    def __init__(self, epoch):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class BudgetExhausted(NlsdError):
    pass


class IncompleteSequence(NlsdError):
    pass


class IoError(NlsdError):
    pass
