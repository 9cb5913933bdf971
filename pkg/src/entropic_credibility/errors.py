"""Exception hierarchy shared by all modules."""


class CredibilityError(Exception):
    """Base class for all package errors."""


class DomainError(CredibilityError, ValueError):
    """An argument lies outside the mean domain or support of a family."""


class UnsupportedFamilyError(CredibilityError, ValueError):
    """The requested operation is not defined for this family."""


class LinkRangeError(CredibilityError, ValueError):
    """A linear predictor maps to a mean outside the mean domain."""


class RankDeficiencyError(CredibilityError, ValueError):
    """The design matrix does not have full column rank."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ConvergenceError(CredibilityError, RuntimeError):
    """IRLS did not converge; ``last`` holds the final iterate."""

    def __init__(self, message, last=None, response=None):
        super().__init__(message)
        self.last = last
        self.response = response


class InsufficientDrawsError(CredibilityError, ValueError):
    """Too few chains or draws for the requested diagnostic."""


class SamplerInitError(CredibilityError, RuntimeError):
    """No chain could be started at a point of positive posterior density."""


class EndpointError(CredibilityError, RuntimeError):
    """A univariate minimizer landed on the boundary of its search interval."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class DataError(CredibilityError, ValueError):
    """Input data or configuration could not be used."""
