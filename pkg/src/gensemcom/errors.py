"""Exception hierarchy shared by all modules."""


class SemComError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SemComError, ValueError):
    """An input violates a documented precondition."""


class FramingError(ValidationError):
    """A bit string cannot be split into whole box records."""


class PlanError(ValidationError):
    """A split plan exceeds the offloading limit or the schedule length."""


class TrainingDivergenceError(SemComError, ArithmeticError):
    """Training produced a non-finite loss."""


class InfeasibleError(SemComError):
    """No option satisfies the budget.

    ``deficit`` carries how far the cheapest option overshoots (ms).
    """

    def __init__(self, message: str, deficit: float):
        super().__init__(message)
        self.deficit = deficit


class NoPathError(SemComError, LookupError):
    """No translation chain is registered between two representations."""


class SearchSpaceError(SemComError):
    """Exhaustive search refused because the instance is too large."""


class ConfigurationError(SemComError):
    """Scenario configuration is missing something the run needs."""
