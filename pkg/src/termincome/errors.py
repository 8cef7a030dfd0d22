"""Exception hierarchy shared by the solver, simulator and CLI."""


class TermIncomeError(Exception):
    """Base class for all package errors."""


class ValidationError(TermIncomeError, ValueError):
    """A parameter or configuration invariant is violated."""


class WellPosednessError(ValidationError):
    """The Merton constant K is not strictly positive."""


class DegenerateMarket(ValidationError):
    """Market price of risk is zero, so the HJB ODE loses its second-order term."""


class DomainError(ValidationError):
    """An argument lies outside the domain of a closed-form expression."""


class EmptyRange(ValidationError):
    """A dual grid leaves the admissible interval (0, y*)."""


class ConfigError(ValidationError):
    """Simulation or run configuration is inconsistent."""


class ParseError(TermIncomeError):
    """A configuration file could not be parsed."""


class SingularDenominator(TermIncomeError, ArithmeticError):
    """The HJB denominator vanished while stepping."""


class SolverBlowup(TermIncomeError, ArithmeticError):
    """The backward integration overflowed before reaching zero wealth.

    ``last_x`` holds the smallest wealth node that was reached.
    """

    def __init__(self, message, last_x=None):
        super().__init__(message)
        self.last_x = last_x


class InvariantViolation(TermIncomeError):
    """A solved value function breaks monotonicity, concavity or the bounds."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node
