"""Exception types raised by the toolkit."""


class TradesError(Exception):
    """Base class for all toolkit-specific errors."""


class MaxIterExceeded(TradesError):
    """An iterative solver hit its iteration cap before reaching tolerance.

    Carries the best iterate seen and its residual so callers can decide
    whether the partial result is usable.
    """

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class NonFiniteDetected(TradesError):
    """A NaN or infinity appeared in the iterate at the given iteration."""

    def __init__(self, iteration, message=None, trace=None):
        super().__init__(message or f"non-finite values at iteration {iteration}")
        self.iteration = iteration
        self.trace = trace


class SinkhornStalled(TradesError):
    """Alternating row/column normalization stopped making progress."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class MaxSweepsExceeded(TradesError):
    """Dykstra's algorithm ran out of sweeps; carries the best iterate."""

    def __init__(self, message, best=None, residual=None, sweeps=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.sweeps = sweeps


class EmptyIntersectionSuspected(TradesError):
    """Dykstra's iterates settled while still far from every set at once."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InfeasibleSpec(TradesError):
    """Problem data admits no feasible point (e.g. an unreachable energy target)."""


class ConfigError(TradesError):
    """An experiment configuration failed validation."""
