"""Exception types raised by noisyglm."""


class NoisyGLMError(ValueError):
    """Base class for input and numerical errors in this package."""


class DomainError(NoisyGLMError):
    """An argument lies outside the domain where the quantity is defined."""


class DimensionError(NoisyGLMError):
    """Arrays with incompatible shapes were combined."""


class RankDeficiencyError(NoisyGLMError):
    """A design or weighted Gram matrix is not of full column rank.

    ``columns`` holds the indices of the offending columns when known.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SolverError(NoisyGLMError):
    """The optimiser produced a non-finite objective or could not make progress."""


class UnboundedObjectiveError(SolverError):
    """The objective has no minimiser: it decreases without bound along some direction."""
