"""Exception hierarchy shared by all modules."""


class FanoGibbsError(Exception):
    """Base class for every error raised by the package."""


class UnderResolvedError(FanoGibbsError):
    """The quadrature grid is too coarse for the requested object."""


class CurvatureError(FanoGibbsError):
    """A metric fails the positive-curvature check at some grid node."""


class MassError(FanoGibbsError):
    """A measure does not have the total mass the operation requires."""


class ConvergenceError(FanoGibbsError):
    """An iterative solver stopped without meeting its tolerance.

    ``best`` carries the best iterate (or value) reached, ``residual`` the
    corresponding residual, so callers can report instead of extrapolate.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class MonotonicityError(FanoGibbsError):
    """Donaldson's map increased the quantized Ding functional."""


class ConfigError(FanoGibbsError):
    """Invalid experiment configuration."""


class IntegrabilityError(FanoGibbsError):
    """The requested exponent lies outside the integrable regime."""


class SamplingError(FanoGibbsError):
    """A Markov chain collapsed or produced too few effective samples."""
