"""Scalar balance law, Riemann shock data, and endstate spectral quantities.

The PDE family is u_t + f(u)_x = eps u_xx + g(u).  A Riemann shock is a pair
of endstates (u_minus, u_plus) with speed sigma0 fixed by the jump relation
f(u_plus) - f(u_minus) = sigma0 (u_plus - u_minus), with g vanishing at both
endstates.  Everything downstream (layer profiles, spectral ODEs, contour
quadrature) consumes the closed-form endstate eigendata assembled here.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BranchCutError, ConfigError, DegenerateShockError


@dataclass(frozen=True)
class ScalarLaw:
    """Flux/source pair with user-supplied derivative evaluators.

    All evaluators are scalar->scalar but must accept numpy arrays.
    Derivatives are cross-checked against central differences at
    construction; no symbolic differentiation is used anywhere.
    """

    f: callable
    g: callable
    df: callable
    d2f: callable
    dg: callable
    name: str = ""

    def __post_init__(self):
        _validate_derivative(self.f, self.df, "df")
        _validate_derivative(self.df, self.d2f, "d2f")
        _validate_derivative(self.g, self.dg, "dg")


def _validate_derivative(func, deriv, label, u_samples=None, h=1e-5, rtol=5e-7):
    """Check deriv against the central difference quotient of func."""
    if u_samples is None:
        u_samples = np.linspace(-2.0, 3.0, 11)
    u = np.asarray(u_samples, dtype=float)
    fd = (np.asarray(func(u + h)) - np.asarray(func(u - h))) / (2.0 * h)
    exact = np.asarray(deriv(u))
    scale = np.maximum(1.0, np.abs(exact))
    err = np.abs(fd - exact) / scale
    if np.max(err) > rtol:
        raise ConfigError(
            f"{label} disagrees with finite differences of its primitive "
            f"(max relative error {np.max(err):.3e})"
        )


@dataclass(frozen=True)
class ShockTriple:
    """Riemann shock data (u_minus, u_plus, sigma0)."""

    u_minus: float
    u_plus: float
    sigma0: float

    def validate(self, law, tol=1e-10):
        """Enforce the jump relation and g-equilibrium at both endstates."""
        if self.u_minus == self.u_plus:
            raise DegenerateShockError("equal endstates")
        for u in (self.u_minus, self.u_plus):
            if abs(law.g(u)) > tol:
                raise ConfigError(f"g({u}) = {law.g(u):.3e} is not an equilibrium")
        jump = law.f(self.u_plus) - law.f(self.u_minus) - self.sigma0 * (self.u_plus - self.u_minus)
        if abs(jump) > tol:
            raise ConfigError(f"jump relation violated by {jump:.3e}")


@dataclass(frozen=True)
class EndstateEigen:
    """Spatial eigendata of the frozen coefficient matrix at one endstate."""

    mu_plus: complex
    mu_minus: complex
    r_plus: np.ndarray
    r_minus: np.ndarray
    l_plus: np.ndarray
    l_minus: np.ndarray


@dataclass(frozen=True)
class DecayRates:
    """Optimal spatial decay rates of the layer tails (left/right)."""

    theta_l: float
    theta_r: float


def rankine_hugoniot_speed(law, u_minus, u_plus):
    """Shock speed from the jump relation; errors on equal endstates."""
    if u_minus == u_plus:
        raise DegenerateShockError("u_minus == u_plus: no shock")
    return (law.f(u_plus) - law.f(u_minus)) / (u_plus - u_minus)


def make_shock(law, u_minus, u_plus):
    """Build a ShockTriple with the Rankine-Hugoniot speed."""
    sigma0 = rankine_hugoniot_speed(law, u_minus, u_plus)
    shock = ShockTriple(u_minus=float(u_minus), u_plus=float(u_plus), sigma0=float(sigma0))
    shock.validate(law)
    return shock


def check_oleinik(law, shock, n_samples=1001):
    """Strict entropy inequalities: two Lax conditions plus the chord condition.

    The chord condition is sampled at n_samples interior points tau in (0,1);
    margin is the smallest slack over all inequalities.  Exact verification
    for arbitrary non-convex fluxes is impossible numerically, so the
    sampling density is a documented heuristic.
    """
    um, up, s0 = shock.u_minus, shock.u_plus, shock.sigma0
    lax_right = s0 - law.df(up)
    lax_left = law.df(um) - s0
    tau = np.linspace(0.0, 1.0, n_samples + 2)[1:-1]
    u_tau = tau * um + (1.0 - tau) * up
    slope_minus = (law.f(u_tau) - law.f(um)) / (u_tau - um)
    slope_plus = (law.f(u_tau) - law.f(up)) / (u_tau - up)
    chord = np.min(slope_minus - slope_plus)
    margin = float(min(lax_right, lax_left, chord))
    return {"ok": margin > 0.0, "margin": margin}


def check_endstate_stability(law, shock):
    """Spectral stability of the endstates: g' < 0 on both sides."""
    gl = law.dg(shock.u_minus)
    gr = law.dg(shock.u_plus)
    return {
        "ok": bool(gl < 0.0 and gr < 0.0),
        "omega_inf": float(min(abs(gl), abs(gr))),
    }


def branch_distance(law, shock, lam, u, eps, sigma_eps=None):
    """Distance from lam to the absolute-spectrum half-line of endstate u."""
    if sigma_eps is None:
        sigma_eps = shock.sigma0
    a = law.df(u) - sigma_eps
    z = 0.25 * a * a + lam - eps * law.dg(u)
    z = complex(z)
    if z.real <= 0.0:
        return abs(z.imag)
    return abs(z)


def mu_pm(law, shock, lam, u, eps, sigma_eps=None, branch_tol=1e-12):
    """Spatial eigenvalues and (co)eigenvectors of the frozen matrix at u.

    mu_pm = a/2 +- sqrt(a^2/4 + lam - eps g'(u)) with a = f'(u) - sigma_eps
    and the square root taken on C \\ R^- with positive real part.  Raises
    BranchCutError when lam sits on (or within branch_tol of) the
    absolute-spectrum half-line where the two roots collide in real part.
    """
    if sigma_eps is None:
        sigma_eps = shock.sigma0
    if branch_distance(law, shock, lam, u, eps, sigma_eps) < branch_tol:
        raise BranchCutError(f"lambda={lam} on the branch half-line of u={u}")
    a = law.df(u) - sigma_eps
    root = np.sqrt(complex(0.25 * a * a + lam - eps * law.dg(u)))
    mu_p = 0.5 * a + root
    mu_m = 0.5 * a - root
    delta = mu_p - mu_m
    r_plus = np.array([1.0, -mu_m], dtype=complex)
    r_minus = np.array([1.0, -mu_p], dtype=complex)
    l_plus = np.array([mu_p, 1.0], dtype=complex) / delta
    l_minus = np.array([-mu_m, -1.0], dtype=complex) / delta
    return EndstateEigen(mu_p, mu_m, r_plus, r_minus, l_plus, l_minus)


def endstate_matrix(law, shock, lam, u, eps, sigma_eps=None):
    """Frozen coefficient matrix [[f'(u)-sigma, 1], [lam - eps g'(u), 0]]."""
    if sigma_eps is None:
        sigma_eps = shock.sigma0
    a = law.df(u) - sigma_eps
    return np.array([[a, 1.0], [lam - eps * law.dg(u), 0.0]], dtype=complex)


def decay_rates(law, shock, sigma_eps, eps):
    """Tail decay rates theta_l, theta_r of the viscous layer.

    theta_r = |f'(u_plus)-sigma|/2 + sqrt((f'(u_plus)-sigma)^2 + 4 eps |g'|)/2
    and symmetrically on the left.  Under the Lax inequalities both signed
    quantities are positive, so the absolute values are inert for admissible
    data; they keep the formula total otherwise.
    """
    ar = law.df(shock.u_plus) - sigma_eps
    al = law.df(shock.u_minus) - sigma_eps
    gr = abs(law.dg(shock.u_plus))
    gl = abs(law.dg(shock.u_minus))
    theta_r = 0.5 * abs(ar) + 0.5 * np.sqrt(ar * ar + 4.0 * eps * gr)
    theta_l = 0.5 * abs(al) + 0.5 * np.sqrt(al * al + 4.0 * eps * gl)
    return DecayRates(theta_l=float(theta_l), theta_r=float(theta_r))


# ---------------------------------------------------------------------------
# Built-in models and config loading


def _poly_law(f_coeffs, g_coeffs, name=""):
    """ScalarLaw from ascending-power polynomial coefficient lists."""
    fp = np.polynomial.Polynomial(f_coeffs)
    gp = np.polynomial.Polynomial(g_coeffs)
    dfp = fp.deriv()
    d2fp = dfp.deriv()
    dgp = gp.deriv()
    return ScalarLaw(f=fp, g=gp, df=dfp, d2f=d2fp, dg=dgp, name=name)


def burgers_cubic():
    """Reference model: f = u^2/2, g = u(1-u)(u-1/2), shock from 1 to 0."""
    law = _poly_law([0.0, 0.0, 0.5], [0.0, -0.5, 1.5, -1.0], name="burgers-cubic")
    shock = make_shock(law, 1.0, 0.0)
    return law, shock


def burgers_cubic_asymmetric():
    """Burgers flux with the asymmetric source g = u(1-u)(u-1/4)."""
    # u(1-u)(u-1/4) = -u^3 + (5/4)u^2 - u/4
    law = _poly_law([0.0, 0.0, 0.5], [0.0, -0.25, 1.25, -1.0], name="burgers-cubic-asymmetric")
    shock = make_shock(law, 1.0, 0.0)
    return law, shock


def burgers_cubic_skew():
    """Burgers flux with a skewed source whose speed corrector vanishes.

    g = u(1-u)(u-1/2) * m(u) with m = 5u^3 - 7.5u^2 + 3u + 0.75 > 0 on [0,1].
    The multiplier is chosen orthogonal to (u-1/2) under the layer measure,
    so sigma_eps - sigma0 starts at order eps^2 with a nonzero coefficient
    (the reference model is exactly symmetric and has sigma_eps = sigma0).
    """
    base = np.polynomial.Polynomial([0.0, -0.5, 1.5, -1.0])
    mult = np.polynomial.Polynomial([0.75, 3.0, -7.5, 5.0])
    gp = base * mult
    law = _poly_law([0.0, 0.0, 0.5], list(gp.coef), name="burgers-cubic-skew")
    shock = make_shock(law, 1.0, 0.0)
    return law, shock


BUILTIN_MODELS = {
    "burgers-cubic": burgers_cubic,
    "burgers-cubic-asymmetric": burgers_cubic_asymmetric,
    "burgers-cubic-skew": burgers_cubic_skew,
}


def model_from_config(cfg):
    """Build (law, shock) from a configuration mapping.

    Accepts either {"name": <builtin>} or polynomial data
    {"f_poly": [...], "g_poly": [...], "u_minus": ..., "u_plus": ...}.
    """
    if "name" in cfg and cfg["name"]:
        name = cfg["name"]
        if name not in BUILTIN_MODELS:
            raise ConfigError(f"unknown model '{name}'; known: {sorted(BUILTIN_MODELS)}")
        return BUILTIN_MODELS[name]()
    try:
        law = _poly_law(list(cfg["f_poly"]), list(cfg["g_poly"]), name="custom-poly")
        return law, make_shock(law, float(cfg["u_minus"]), float(cfg["u_plus"]))
    except KeyError as exc:
        raise ConfigError(f"model config missing key {exc}") from exc
