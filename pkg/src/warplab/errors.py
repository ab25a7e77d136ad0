class WarplabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(WarplabError, ValueError):
    """Invalid configuration, pole rule, grid request or run parameters."""


class SingularPointError(WarplabError, ValueError):
    """Evaluation requested at a point where the quantity is not defined."""


class TruncationError(WarplabError, ArithmeticError):
    """An infinite series could not be truncated within the requested tolerance.

    ``achieved`` holds the best tail bound reached before giving up.
    """

    def __init__(self, message, achieved=float("inf")):
        super().__init__(message)
        self.achieved = achieved


class SeminormDivergence(WarplabError, ArithmeticError):
    """A Sobolev seminorm grows without bound under refinement.

    ``table`` lists ``(depth, value)`` pairs from the refinement sequence.
    """

    def __init__(self, message, table=()):
        super().__init__(message)
        self.table = list(table)
