"""Shared exception and warning types."""


class MppFlowError(Exception):
    """Base class for all package errors."""


class EllipticityViolation(MppFlowError):
    """Noise fields fail to span R^d at a queried point.

    Carries the offending time, point and the smallest eigenvalue found.
    """

    def __init__(self, t, x, min_eig, floor):
        self.t = t
        self.x = x
        self.min_eig = min_eig
        self.floor = floor
        super().__init__(
            f"noise cometric has eigenvalue {min_eig:.3e} < floor {floor:.3e} "
            f"at t={t}, x={x}"
        )


class NonConvergence(MppFlowError):
    """Iterative solve hit its cap. Carries the best iterate so the caller
    can decide whether to accept it."""

    def __init__(self, message, best=None, residual=None):
        self.best = best
        self.residual = residual
        super().__init__(message)


class BlowUpError(MppFlowError):
    """Trajectory left the configured domain bound."""

    def __init__(self, t, norm, bound):
        self.t = t
        self.norm = norm
        self.bound = bound
        super().__init__(f"trajectory norm {norm:.3e} exceeded bound {bound:.3e} at t={t:.6g}")


class ConfigError(MppFlowError):
    """Scenario configuration is missing or malformed. ``key`` names the
    offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


class NearSingularMetricWarning(UserWarning):
    """Cometric eigenvalue within 10x of the ellipticity floor."""


class ResolutionWarning(UserWarning):
    """Spectral field develops significant energy in the top third of modes."""
