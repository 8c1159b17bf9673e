"""Exception types shared across the package."""


class ShockLabError(Exception):
    """Base class for all package errors."""


class DegenerateShockError(ShockLabError, ValueError):
    """Equal endstates: no jump, Rankine-Hugoniot speed undefined."""


class NoConnectionError(ShockLabError, ValueError):
    """Layer ODE has no heteroclinic connection (non-entropic data)."""


class RangeError(ShockLabError, ValueError):
    """Right-hand side outside the operator range (nonzero mean)."""


class ContractionError(ShockLabError, RuntimeError):
    """Fixed-point iteration failed to contract within max_iter."""

    def __init__(self, msg, last_residual=None):
        super().__init__(msg)
        self.last_residual = last_residual


class BranchCutError(ShockLabError, ValueError):
    """Spectral parameter on or too close to an absolute-spectrum half-line."""


class NearBranchError(ShockLabError, ValueError):
    """Endstate spectral gap collapsed; manifold integration unreliable."""


class RefineContourError(ShockLabError, ValueError):
    """Argument increment between adjacent contour nodes too large."""


class InvalidContourError(ShockLabError, ValueError):
    """Contour parameters violate the curve-family constraints."""


class ExtendContourError(ShockLabError, RuntimeError):
    """Contour truncation error estimate above tolerance."""


class DivergenceError(ShockLabError, RuntimeError):
    """Time integration blew past the guard amplitude."""


class ConfigError(ShockLabError, ValueError):
    """Malformed or inconsistent experiment configuration."""
