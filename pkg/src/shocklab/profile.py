"""Viscous shock layers: the eps=0 profile and its eps-perturbation.

The eps=0 layer solves the first-order ODE

    U0' = f(U0) - f(u_plus) - sigma0 (U0 - u_plus),   U0(0) = (u_minus+u_plus)/2,

and the eps-wave (sigma_eps, U_eps) is produced by iterating the anchored
corrector map

    w <- L0_dag( -g(U0+eps w) - Sigma[w] (U0+eps w)' + ((f(U0+eps w)-f(U0)-eps f'(U0) w)/eps)' )

whose fixed point gives U_eps = U0 + eps w and sigma_eps = sigma0 + eps Sigma[w].
L0_dag is the explicit double-quadrature inverse of v -> v'' - ((f'(U0)-sigma0) v)'
restricted to zero-mean right-hand sides and anchored by v(0) = 0.  All
cumulative quadratures are fourth order, tail-anchored from the decaying end
so that the stored derivative pair (U_eps, U_eps') satisfies the flux-form
profile relation to quadrature accuracy rather than O(h^2).
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import numerics as num
from .errors import ContractionError, NoConnectionError, RangeError
from .model import check_oleinik, decay_rates


@dataclass(frozen=True)
class ProfileGrid:
    """Uniform symmetric grid on [-L, L] with a node exactly at 0."""

    half_width: float
    spacing: float
    nodes: np.ndarray = field(repr=False)

    @property
    def center(self):
        return self.nodes.shape[0] // 2

    @property
    def n(self):
        return self.nodes.shape[0]

    @staticmethod
    def make(half_width=80.0, spacing=0.05):
        m = round(half_width / spacing)
        if abs(m * spacing - half_width) > 1e-12:
            raise ValueError("half_width must be an integer multiple of spacing")
        nodes = spacing * np.arange(-m, m + 1, dtype=float)
        return ProfileGrid(half_width=float(half_width), spacing=float(spacing), nodes=nodes)


def default_grid(law, shock, half_width=80.0, spacing=0.05):
    """Reference grid; enforces L >= 40 / min(theta0) so tails are < 1e-15."""
    rates = decay_rates(law, shock, shock.sigma0, 0.0)
    needed = 40.0 / min(rates.theta_l, rates.theta_r)
    if half_width < needed:
        raise ValueError(f"half_width {half_width} < {needed:.1f} required by tail decay")
    return ProfileGrid.make(half_width, spacing)


@dataclass(frozen=True)
class LayerProfile:
    """The eps=0 shock layer U0 with its derivative on the grid."""

    law: object
    shock: object
    grid: ProfileGrid
    u0: np.ndarray = field(repr=False)
    du0: np.ndarray = field(repr=False)

    @property
    def ddu0(self):
        # U0'' = (f'(U0) - sigma0) U0', differentiating the layer ODE
        return (self.law.df(self.u0) - self.shock.sigma0) * self.du0

    def validate(self, residual_tol=1e-10):
        s = self.shock
        mid = 0.5 * (s.u_minus + s.u_plus)
        assert self.u0[self.grid.center] == mid, "anchor violated"
        res = self.du0 - _layer_rhs(self.law, s, self.u0)
        assert np.max(np.abs(res)) <= residual_tol, "layer ODE residual too large"
        sgn = np.sign(s.u_plus - s.u_minus)
        active = self.du0 != 0.0
        assert np.all(np.sign(self.du0[active]) == sgn), "monotonicity violated"
        # derivative may vanish only where the profile has saturated
        sat = np.minimum(np.abs(self.u0 - s.u_minus), np.abs(self.u0 - s.u_plus)) < 1e-13
        assert np.all(active | sat), "derivative vanished away from the endstates"


def _layer_rhs(law, shock, u):
    return law.f(u) - law.f(shock.u_plus) - shock.sigma0 * (u - shock.u_plus)


def _integrate_side(law, shock, x0, val0, xs_outward, endstate, splice_tol, ivp_tol):
    """Integrate one side of the layer ODE, splicing the far tail.

    Below deviation splice_tol from the endstate, the adaptive integrator's
    absolute noise floor swamps the exponentially small deviation, so the
    tail is continued with the exact linearized decay rate
    f'(endstate) - sigma0.  Returns (u, du) on xs_outward (ordered from the
    anchor outward), both with relative tail accuracy.
    """

    def rhs(_, u):
        return _layer_rhs(law, shock, u)

    sol = solve_ivp(rhs, (x0, xs_outward[-1]), [val0], t_eval=xs_outward,
                    rtol=1e-13, atol=ivp_tol, method="RK45")
    if not sol.success:
        raise NoConnectionError(sol.message)
    u = sol.y[0]
    d = u - endstate
    du = _layer_rhs(law, shock, u)
    rate = law.df(endstate) - shock.sigma0
    small = np.abs(d) < splice_tol
    if np.any(small):
        k = int(np.argmax(small))  # first node past the splice threshold
        d_tail = d[k] * np.exp(rate * (xs_outward[k:] - xs_outward[k]))
        u[k:] = endstate + d_tail
        du[k:] = rate * d_tail
    return u, du


def solve_layer(law, shock, grid, anchor=None, splice_tol=1e-9, ivp_tol=1e-14):
    """Integrate the layer ODE from the midpoint anchor to both ends.

    anchor: optional (x0, value) pair replacing the default anchor at x=0;
    used by the translation-covariance checks.
    """
    ole = check_oleinik(law, shock)
    if not ole["ok"]:
        raise NoConnectionError(f"data not strictly entropic (margin {ole['margin']:.3e})")
    if anchor is None:
        x0 = 0.0
        val0 = 0.5 * (shock.u_minus + shock.u_plus)
    else:
        x0, val0 = anchor

    x = grid.nodes
    u0 = np.empty_like(x)
    du0 = np.empty_like(x)
    i0 = int(np.argmin(np.abs(x - x0)))
    right = x[x >= x0]
    left = x[x <= x0][::-1]
    if right.size:
        u, du = _integrate_side(law, shock, x0, val0, right, shock.u_plus, splice_tol, ivp_tol)
        u0[x >= x0] = u
        du0[x >= x0] = du
    if left.size:
        u, du = _integrate_side(law, shock, x0, val0, left, shock.u_minus, splice_tol, ivp_tol)
        u0[x <= x0] = u[::-1]
        du0[x <= x0] = du[::-1]
    if anchor is None:
        u0[i0] = val0  # exact anchoring at the center node
        du0[i0] = _layer_rhs(law, shock, val0)
    prof = LayerProfile(law=law, shock=shock, grid=grid, u0=u0, du0=du0)
    if anchor is None:
        prof.validate()
    return prof


def sigma_functional(law, shock, layer, u_tilde, eps):
    """Speed corrector Sigma[w] = -(integral of g(U0 + eps w)) / (u_plus - u_minus).

    Plain trapezoid quadrature; the integrand has flat tails below 1e-15 by
    grid design, so trapezoid is already at full accuracy here.
    """
    vals = law.g(layer.u0 + eps * np.asarray(u_tilde))
    total = np.trapezoid(vals, dx=layer.grid.spacing)
    return -total / (shock.u_plus - shock.u_minus)


def _safe_ratio(h_vals, du0):
    """h/U0' with saturated-tail guard (U0' may underflow to exactly 0)."""
    out = np.zeros_like(h_vals)
    ok = du0 != 0.0
    out[ok] = h_vals[ok] / du0[ok]
    return out


def _l0_dagger_core(layer, flux_anti):
    """Invert the layer-linearized operator given the flux antiderivative.

    flux_anti is H with H' = h (the right-hand side), anchored so that H
    decays at both ends.  Returns (v, v') with v(0) = 0 exactly and the
    pointwise-exact relation v' - (f'(U0)-sigma0) v = H.
    """
    g = layer.grid
    ratio = _safe_ratio(flux_anti, layer.du0)
    c = num.cumquad4(ratio, g.spacing)
    c = c - c[g.center]
    v = layer.du0 * c
    vp = layer.ddu0 * c + flux_anti
    return v, vp


def _two_sided_antiderivative(values, h, center):
    """Antiderivative of a zero-mean integrand, tail-anchored on each side.

    Left of the center node uses the left-anchored cumulative (integral from
    -L), right of it the right-anchored one (minus the integral to +L); both
    keep relative accuracy in the decaying tails.
    """
    left = num.cumquad4(values, h)
    right = -num.cumquad4_right(values, h)
    out = np.where(np.arange(values.shape[0]) <= center, left, right)
    return out


def apply_L0_dagger(layer, h_values, mean_tol=1e-10):
    """Apply the explicit inverse of L0 v = v'' - ((f'(U0)-sigma0) v)'.

    Requires a zero-integral right-hand side (range condition); returns v
    anchored by v(0) = 0.
    """
    h_values = np.asarray(h_values, dtype=float)
    g = layer.grid
    total = num.quad4(h_values, g.spacing)
    if abs(total) > mean_tol * max(1.0, np.max(np.abs(h_values))):
        raise RangeError(f"right-hand side has nonzero integral {total:.3e}")
    flux_anti = _two_sided_antiderivative(h_values, g.spacing, g.center)
    v, _ = _l0_dagger_core(layer, flux_anti)
    return v


@dataclass(frozen=True)
class EpsProfile:
    """The eps-wave (sigma_eps, U_eps) plus its corrector fields."""

    layer: LayerProfile
    eps: float
    sigma_eps: float
    sigma_tilde: float
    u_eps: np.ndarray = field(repr=False)
    du_eps: np.ndarray = field(repr=False)
    u_tilde: np.ndarray = field(repr=False)
    du_tilde: np.ndarray = field(repr=False)
    iterations: int = 0
    correction_norms: tuple = ()

    @property
    def grid(self):
        return self.layer.grid

    @property
    def law(self):
        return self.layer.law

    @property
    def shock(self):
        return self.layer.shock

    def flux_residual(self):
        """Integrated profile-equation residual, quadrature form.

        P(x) - P(-L) - eps * int g(U_eps), with P = f(U_eps) - sigma_eps U_eps
        - U_eps'; identically zero for an exact profile.
        """
        law, s, g = self.law, self.shock, self.grid
        p = law.f(self.u_eps) - self.sigma_eps * self.u_eps - self.du_eps
        q = num.cumquad4(law.g(self.u_eps), g.spacing)
        return (p - p[0]) - self.eps * q

    def validate(self, residual_tol=1e-8):
        s = self.shock
        mid = 0.5 * (s.u_minus + s.u_plus)
        assert abs(self.u_eps[self.grid.center] - mid) < 1e-14, "anchor violated"
        res = np.max(np.abs(self.flux_residual()))
        assert res <= residual_tol, f"profile residual {res:.3e} > {residual_tol}"
        sgn = np.sign(s.u_plus - s.u_minus)
        active = self.du_eps != 0.0
        assert np.all(np.sign(self.du_eps[active]) == sgn), "U_eps not monotone"


def _splice_eps_tails(law, shock, grid, sigma_eps, eps, u_eps, du_eps, splice_tol=1e-12):
    """Replace unresolvable far tails of the eps-wave by exact exponentials.

    The corrector representation U0 + eps*w carries an absolute noise floor
    of order e^{-theta0 |x|} * (expansion noise); beyond the point where the
    true wave (decaying at the faster rate theta_eps) drops below that
    floor, the represented tail is garbage.  From the last resolvable node
    outward, continue with the exact endstate rates mu_-^eps(0;u_plus) on
    the right and mu_+^eps(0;u_minus) on the left.
    """
    from .model import mu_pm

    x = grid.nodes
    c = grid.center
    # right tail
    d = u_eps - shock.u_plus
    small = np.abs(d[c:]) < splice_tol
    if np.any(small):
        k = c + int(np.argmax(small))
        rate = mu_pm(law, shock, 0.0, shock.u_plus, eps, sigma_eps).mu_minus.real
        tail = d[k] * np.exp(rate * (x[k:] - x[k]))
        u_eps[k:] = shock.u_plus + tail
        du_eps[k:] = rate * tail
    # left tail
    d = u_eps - shock.u_minus
    small = np.abs(d[: c + 1][::-1]) < splice_tol
    if np.any(small):
        k = c - int(np.argmax(small))
        rate = mu_pm(law, shock, 0.0, shock.u_minus, eps, sigma_eps).mu_plus.real
        tail = d[k] * np.exp(rate * (x[: k + 1] - x[k]))
        u_eps[: k + 1] = shock.u_minus + tail
        du_eps[: k + 1] = rate * tail
    return u_eps, du_eps


def _flux_quotient(law, u0, w, eps):
    """(f(U0+eps w) - f(U0) - eps f'(U0) w)/eps with a small-eps fallback."""
    if eps == 0.0:
        return np.zeros_like(u0)
    if eps < 1e-6:
        # second-order Taylor form; avoids 0/0 cancellation at tiny eps
        return 0.5 * eps * law.d2f(u0) * w * w
    return (law.f(u0 + eps * w) - law.f(u0) - eps * law.df(u0) * w) / eps


def solve_profile_eps(law, shock, layer, eps, tol=1e-12, max_iter=200):
    """Iterate the corrector map to the eps-wave.

    Stops when the sup-norm difference of successive corrector iterates
    drops below tol; raises ContractionError past max_iter.  At eps = 0 the
    map is constant in the iterate, so the fixed point is reached after a
    single application.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    g = layer.grid
    u0, du0 = layer.u0, layer.du0
    w = np.zeros_like(u0)
    wp = np.zeros_like(u0)
    deltas = []
    sig = 0.0
    for it in range(1, max_iter + 1):
        sig = sigma_functional(law, shock, layer, w, eps)
        n0 = -law.g(u0 + eps * w) - sig * (du0 + eps * wp)
        q = _flux_quotient(law, u0, w, eps)
        flux_anti = _two_sided_antiderivative(n0, g.spacing, g.center) + (q - q[0])
        w_new, wp_new = _l0_dagger_core(layer, flux_anti)
        delta = float(np.max(np.abs(w_new - w)))
        deltas.append(delta)
        w, wp = w_new, wp_new
        if delta < tol:
            break
    else:
        raise ContractionError(
            f"profile fixed point did not converge in {max_iter} iterations",
            last_residual=deltas[-1],
        )
    sig = sigma_functional(law, shock, layer, w, eps)
    sigma_eps = float(shock.sigma0 + eps * sig)
    u_eps = u0 + eps * w
    du_eps = du0 + eps * wp
    if eps > 0:
        u_eps, du_eps = _splice_eps_tails(law, shock, g, sigma_eps, eps, u_eps, du_eps)
        w = (u_eps - u0) / eps
        wp = (du_eps - du0) / eps
    prof = EpsProfile(
        layer=layer,
        eps=float(eps),
        sigma_eps=sigma_eps,
        sigma_tilde=float(sig),
        u_eps=u_eps,
        du_eps=du_eps,
        u_tilde=w,
        du_tilde=wp,
        iterations=len(deltas),
        correction_norms=tuple(deltas),
    )
    prof.validate()
    return prof


def weighted_profile_deviation(prof, theta):
    """sup over the grid of e^{theta |x|} |U_eps - U0| (both tails)."""
    x = prof.grid.nodes
    return float(np.max(np.exp(theta * np.abs(x)) * np.abs(prof.u_eps - prof.layer.u0)))


def _weighted_tail_diff(x, w_eps, f_eps, w0, f0, mask):
    return float(np.max(np.abs(w_eps[mask] * f_eps[mask] - w0[mask] * f0[mask])))


def verify_profile_asymptotics(layer, eps_profiles, k_max=1, reliable=1e-13):
    """Tail-weighted comparison of U_eps to U0 at the optimal rates.

    For each profile, computes sup |e^{theta_eps |x|}(U_eps - endstate) -
    e^{theta_0 |x|}(U0 - endstate)| on each side (and the derivative
    analogues up to k_max by finite differences), divided by eps.  The sup
    is restricted to nodes where the tail is resolvable above roundoff
    (|U0 - endstate| >= reliable), since beyond that the weights amplify
    floating noise rather than signal.  Report-only.
    """
    law, shock = layer.law, layer.shock
    x = layer.grid.nodes
    h = layer.grid.spacing
    r0 = decay_rates(law, shock, shock.sigma0, 0.0)
    rows = []
    for prof in eps_profiles:
        re = decay_rates(law, shock, prof.sigma_eps, prof.eps)
        entry = {"eps": prof.eps, "ratios": {}}
        for side, endstate, th_e, th_0 in (
            ("left", shock.u_minus, re.theta_l, r0.theta_l),
            ("right", shock.u_plus, re.theta_r, r0.theta_r),
        ):
            mask = (x <= 0) if side == "left" else (x >= 0)
            mask &= np.abs(layer.u0 - endstate) >= reliable
            w_e = np.exp(th_e * np.abs(x))
            w_0 = np.exp(th_0 * np.abs(x))
            fields_e = [prof.u_eps - endstate]
            fields_0 = [layer.u0 - endstate]
            for k in range(1, k_max + 1):
                if k == 1:
                    fields_e.append(prof.du_eps)
                    fields_0.append(layer.du0)
                else:
                    fields_e.append(num.fd1_centered(fields_e[-1], h))
                    fields_0.append(num.fd1_centered(fields_0[-1], h))
            for k in range(k_max + 1):
                diff = _weighted_tail_diff(x, w_e, fields_e[k], w_0, fields_0[k], mask)
                ratio = diff / prof.eps if prof.eps > 0 else 0.0
                entry["ratios"][(side, k)] = ratio
        rows.append(entry)
    report = {"rows": rows, "bounded": True}
    for k in range(k_max + 1):
        for side in ("left", "right"):
            vals = [r["ratios"][(side, k)] for r in rows if r["eps"] > 0]
            if len(vals) >= 2 and min(vals) > 0:
                report["bounded"] &= max(vals) / min(vals) <= 2.0
    return report


# ---------------------------------------------------------------------------
# CSV persistence


def profile_to_csv(prof, path):
    """Write x,u0,du0,u_eps,du_eps columns plus a JSON metadata sidecar."""
    path = str(path)
    g = prof.grid
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "u0", "du0", "u_eps", "du_eps"])
        for i in range(g.n):
            wr.writerow([repr(g.nodes[i]), repr(prof.layer.u0[i]), repr(prof.layer.du0[i]),
                         repr(prof.u_eps[i]), repr(prof.du_eps[i])])
    meta = {
        "eps": prof.eps,
        "sigma_eps": prof.sigma_eps,
        "sigma_tilde": prof.sigma_tilde,
        "half_width": g.half_width,
        "spacing": g.spacing,
        "model": prof.law.name,
        "u_minus": prof.shock.u_minus,
        "u_plus": prof.shock.u_plus,
        "sigma0": prof.shock.sigma0,
    }
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def profile_from_csv(law, shock, path):
    """Rebuild an EpsProfile (without iteration diagnostics) from CSV + sidecar."""
    path = str(path)
    with open(path + ".meta.json") as fh:
        meta = json.load(fh)
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    grid = ProfileGrid.make(meta["half_width"], meta["spacing"])
    if not np.allclose(grid.nodes, data[:, 0], atol=1e-12):
        raise ValueError("grid in CSV does not match metadata")
    layer = LayerProfile(law=law, shock=shock, grid=grid, u0=data[:, 1], du0=data[:, 2])
    eps = float(meta["eps"])
    u_t = (data[:, 3] - data[:, 1]) / eps if eps > 0 else np.zeros_like(data[:, 1])
    du_t = (data[:, 4] - data[:, 2]) / eps if eps > 0 else np.zeros_like(data[:, 1])
    return EpsProfile(
        layer=layer, eps=eps, sigma_eps=float(meta["sigma_eps"]),
        sigma_tilde=float(meta["sigma_tilde"]), u_eps=data[:, 3], du_eps=data[:, 4],
        u_tilde=u_t, du_tilde=du_t,
    )
