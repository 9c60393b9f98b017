"""Exception hierarchy shared by all modules."""


class CopasBiasError(Exception):
    """Base class for every error raised by this package."""


class DomainError(CopasBiasError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericalError(CopasBiasError, ArithmeticError):
    """A computation produced a non-finite or otherwise invalid value."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (study index {index})")
        self.index = index


class DegenerateInformationError(NumericalError):
    """The nuisance block of the information matrix is not positive definite."""


class FitError(CopasBiasError):
    """A likelihood maximization failed."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class ScoreTestError(CopasBiasError):
    """The sup-score test could not be computed."""


class SingularDesignError(CopasBiasError):
    """A regression design matrix is rank deficient."""


class TrimFillError(CopasBiasError):
    """Trim-and-fill iterations did not converge."""

    def __init__(self, message: str, trajectory=()):
        super().__init__(message)
        self.trajectory = list(trajectory)


class GenerationError(CopasBiasError):
    """A simulation generator could not produce the requested studies."""


class HarnessError(CopasBiasError):
    """Too many replicate-level failures in a Monte-Carlo run."""
