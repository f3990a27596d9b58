class GConvError(Exception):
    """Base class for engine errors."""


class CFLViolation(GConvError):
    pass


class NonFiniteSolution(GConvError):
    """Stepping produced inf/nan; usually the domain is too small for the payoff's growth."""


class GridBudgetError(GConvError):
    pass


class DegenerateConvolution(GConvError):
    """The driver intervals are disjoint, so the inf-convolution is identically -inf."""
