"""Exception types raised across the package."""


class MvutilError(Exception):
    """Base class for all package errors."""


class UndefinedExpectation(MvutilError):
    """Both +inf and -inf carry positive weight in an expectation."""


class RejectUnbounded(MvutilError):
    """No concave function dominates the utility."""


class NoConcavification(MvutilError):
    """The concave envelope is identically +inf."""


class NegativeDual(MvutilError):
    """A conjugate was requested at a negative slope."""


class Infeasible(MvutilError):
    """The budget is below the cheapest admissible wealth."""


class NumericalBracketFailure(MvutilError):
    """The multiplier could not be bracketed below the search cap."""


class NotAGap(MvutilError):
    """The budget does not fall inside a jump of the cost curve."""


class RegimeViolation(MvutilError):
    """Closed-form VaR selection requested outside its validity range."""


class ConstraintUnreachable(MvutilError):
    """The probability constraint cannot be met below the search cap."""


class SearchSpaceTooLarge(MvutilError):
    """A brute-force search exceeds the exhaustive limit and no shortcut applies."""


class ScenarioError(MvutilError):
    """A scenario file is malformed. The message names the offending key."""
