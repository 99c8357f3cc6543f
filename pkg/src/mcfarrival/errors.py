"""Exception hierarchy shared by all modules."""


class MCFError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(MCFError, ValueError):
    """Invalid shape, grid or run configuration."""


class MeanConvexityError(ConfigurationError):
    """The boundary of the domain has nonpositive mean curvature somewhere."""

    def __init__(self, message, h_min=None):
        super().__init__(message)
        self.h_min = h_min


class SolverFailure(MCFError, RuntimeError):
    """Newton (and the Picard fallback) did not reach the residual tolerance."""

    def __init__(self, message, residual_history=(), rung=None):
        super().__init__(message)
        self.residual_history = list(residual_history)
        self.rung = rung


class MonotonicityViolation(MCFError, RuntimeError):
    """A regularized solution went negative inside the domain."""


class OracleError(MCFError, RuntimeError):
    """The radial shooting oracle could not bracket the center value."""

    def __init__(self, message, brackets=()):
        super().__init__(message)
        self.brackets = list(brackets)


class EmptySlabError(MCFError, ValueError):
    """A coarea slab contains no grid cells."""


class WindowError(MCFError, ValueError):
    """A compact window touches the boundary of the domain."""


class PerturbationError(MCFError, ValueError):
    """A perturbation changes the function outside its declared window."""


class PlumbingError(MCFError, AssertionError):
    """Two routes that must agree algebraically disagree."""
