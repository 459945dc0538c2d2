"""Exception hierarchy shared by the solvers, probes and the command line."""


class SigmaLabError(Exception):
    """Base class."""


class SamplerError(SigmaLabError):
    """A cone sampler could not produce the requested number of points."""


class InadmissibleError(SigmaLabError, ValueError):
    """Eigenvalues fall outside the Garding cone where admissibility is required."""

    def __init__(self, message, *, where=None, eigenvalues=None):
        super().__init__(message)
        self.where = where
        self.eigenvalues = eigenvalues


class CompatibilityError(SigmaLabError, ValueError):
    """Right-hand side violates a solvability condition."""


class ConvergenceError(SigmaLabError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(SigmaLabError, ValueError):
    """Malformed or inconsistent configuration."""
