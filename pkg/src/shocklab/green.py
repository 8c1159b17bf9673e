"""Resolvent kernels and time Green functions by contour quadrature.

The resolvent kernel G(lam; x, y) is assembled from the decaying manifolds,
their duals (scalar multiples, see evans module), and the Evans function:

    G(lam; x, y) = e^{I_l}/D * v^{rs}_1(x) vt^{lu}_1(y)   (x > y)
    G(lam; x, y) = e^{-I_r}/D * v^{lu}_1(x) vt^{rs}_1(y)  (x < y)

(orientation fixed by (lam - L) G = delta_y with the standard distributional
sign, under which the kernel of the heat-type semigroup is positive and the
flux coordinate drops by one across x = y)

with same-side re-expansions through the connection coefficients whenever x
and y sit on the same side of the layer, so that only decaying factors are
ever evaluated.  Time kernels are 1/(2 pi i) * oint e^{lam t} G dlam over
curve families parametrized by 2 sqrt(alpha^2/4 - b + Lambda(xi)) = c0 + i
xi zeta_{sign xi}; the parametrization makes the own-endstate square root
linear in xi, so integrands are analytic in a strip and the trapezoid rule
converges fast.

The pointwise/essential splitting assigns, on the low-frequency arc inside
the characteristic cone, the transmission (tau-type) part of the kernel to
the pointwise piece and the reflection (rho-type) part to the essential
piece; the high-frequency arcs and the outside-cone zones go wholesale to
one piece per the zone table.  The reflection quotients rho/D are entire
and are evaluated in closed form, so the essential piece never divides by
the vanishing Evans function.  The phase kernel subtracts the rank-one
wave-derivative dyad; the remainder is computed as the exact difference, so
the reconstruction identity holds to roundoff by construction.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from . import evans as ev
from . import numerics as num
from .errors import ExtendContourError, InvalidContourError
from .model import check_endstate_stability


# ---------------------------------------------------------------------------
# Contour specifications and curve families


@dataclass(frozen=True)
class ContourSpec:
    """One curve of the family 2 sqrt(alpha^2/4 - b + Lambda) = c0 + i xi zeta.

    kind "large" uses the time-scaled offset c0 = beta0/t; kind "small" the
    fixed offset c0 = omega0.
    """

    kind: str
    alpha: float
    b: float
    beta0: float = 0.0
    omega0: float = 0.0
    zeta_plus: complex = 1.0 - 0.5j
    zeta_minus: complex = 1.0 + 0.5j
    xi_max: float = 10.0
    n_nodes: int = 401

    def validate(self):
        for z in (self.zeta_plus, self.zeta_minus):
            if not z.real > abs(z.imag):
                raise InvalidContourError(f"Re zeta must exceed |Im zeta|: {z}")
        if not (self.zeta_plus.imag < 0 < self.zeta_minus.imag):
            raise InvalidContourError("need -Im zeta_+ > 0 and Im zeta_- > 0")
        if self.kind not in ("large", "small"):
            raise InvalidContourError(f"unknown contour kind {self.kind!r}")
        if self.b >= 0:
            raise InvalidContourError("curve lemma hypotheses need b < 0")
        if self.kind == "small" and self.omega0 < abs(self.alpha):
            lim = abs(self.alpha) / np.sqrt(self.alpha**2 - self.omega0**2)
            for z in (self.zeta_plus, self.zeta_minus):
                if not z.real >= lim * abs(z.imag):
                    raise InvalidContourError(
                        f"zeta {z} violates Re zeta >= {lim:.3f} |Im zeta|"
                    )
        if self.n_nodes < 9 or self.n_nodes % 2 == 0:
            raise InvalidContourError("n_nodes must be odd and >= 9")

    def offset(self, t):
        return self.beta0 / t if self.kind == "large" else self.omega0


def contour_points(spec, t):
    """(xi, Lambda(xi), Lambda'(xi)) on the symmetric xi-grid.

    The parametrization switches slope at xi = 0; the node sitting on the
    kink carries the average of the one-sided derivatives, which keeps the
    trapezoid sum exactly conjugate-symmetric for real-coefficient kernels.
    """
    spec.validate()
    xi = np.linspace(-spec.xi_max, spec.xi_max, spec.n_nodes)
    zeta = np.where(xi >= 0, spec.zeta_plus, spec.zeta_minus)
    c0 = spec.offset(t)
    root = 0.5 * (c0 + 1j * xi * zeta)
    lam = root * root - 0.25 * spec.alpha**2 + spec.b
    dlam = 1j * zeta * root
    k0 = np.flatnonzero(xi == 0.0)
    if k0.size:
        mean_zeta = 0.5 * (spec.zeta_plus + spec.zeta_minus)
        dlam[k0] = 1j * mean_zeta * 0.5 * c0
    return xi, lam, dlam


def build_contour(spec, t):
    """Contour nodes Lambda(xi_k); see contour_points for the derivative."""
    return contour_points(spec, t)[1]


@dataclass(frozen=True)
class CurveFamily:
    """Model-derived curve parameters shared by all quadratures.

    om_hf_* are the cone speeds (> |characteristic speed|); om_eta_* the
    small offsets tied to eta0 = half the essential-spectrum margin; xi_hf
    the low/high-frequency split; zeta_hf the reference slope pair.  All of
    it is recorded in run metadata.
    """

    eta0: float
    om_hf_r: float
    om_hf_l: float
    om_eta_r: float
    om_eta_l: float
    zeta_plus: complex
    zeta_minus: complex
    xi_hf: float

    def zeta_omega(self, side, omega, sign):
        """Interpolated slope making the omega-offset curve meet the HF arc."""
        om_hf = self.om_hf_r if side == "r" else self.om_hf_l
        z = self.zeta_plus if sign > 0 else self.zeta_minus
        shift = (om_hf - omega) / self.xi_hf
        return complex(z.real, z.imag - sign * shift)


def curve_family(prof, zeta_scale=1.0, hf_factor=1.5):
    """Curve parameters for a profile; validates the slope constraints."""
    co = ev.coeffs_for(prof)
    omega_inf = check_endstate_stability(prof.law, prof.shock)["omega_inf"]
    eta0 = 0.5 * prof.eps * omega_inf
    om_hf_r = hf_factor * abs(co.a_r)
    om_hf_l = hf_factor * abs(co.a_l)
    om_eta_r = 2.0 * np.sqrt(max(0.25 * co.a_r**2 - 0.5 * eta0, 0.0))
    om_eta_l = 2.0 * np.sqrt(max(0.25 * co.a_l**2 - 0.5 * eta0, 0.0))
    zp = zeta_scale * (1.0 - 0.5j)
    zm = zeta_scale * (1.0 + 0.5j)
    xi_hf = 2.0 * max(om_hf_r - om_eta_r, om_hf_l - om_eta_l) / abs(zp.imag)
    fam = CurveFamily(eta0=eta0, om_hf_r=om_hf_r, om_hf_l=om_hf_l,
                      om_eta_r=om_eta_r, om_eta_l=om_eta_l,
                      zeta_plus=zp, zeta_minus=zm, xi_hf=xi_hf)
    # reinforced slope constraint for exponential decay of the HF arcs
    need = np.sqrt(zp.imag**2 + 2.0 * max(om_hf_r**2 - co.a_r**2,
                                          om_hf_l**2 - co.a_l**2) / xi_hf**2)
    if zp.real < need - 1e-12:
        raise InvalidContourError(
            f"hf_factor {hf_factor} too small for the reinforced slope constraint"
        )
    # the curves must cross the real axis right of the Evans root at 0
    for om, a, b in ((om_hf_r, co.a_r, co.b_r), (om_hf_l, co.a_l, co.b_l)):
        if 0.25 * (om * om - a * a) + b <= 0:
            raise InvalidContourError("cone speed too small: curve crosses left of 0")
    return fam


def family_spec(prof, fam, side, t, xtent, tail_tol=1e-10, phase_res=0.35,
                omega=None, zeta_scale_extra=1.0, max_nodes=250000):
    """A small-kind ContourSpec for one side with auto xi_max and node count.

    xtent: the largest |x|+|y| the integrand will be evaluated at (sets the
    phase-resolution requirement).  omega defaults to the side's cone speed.
    """
    co = ev.coeffs_for(prof)
    a, b = (co.a_r, co.b_r) if side == "r" else (co.a_l, co.b_l)
    om = (fam.om_hf_r if side == "r" else fam.om_hf_l) if omega is None else omega
    zp = fam.zeta_plus * zeta_scale_extra
    zm = fam.zeta_minus * zeta_scale_extra
    T = -np.log(tail_tol)
    xi_max = 0.0
    for z in (zp, zm):
        s_im = abs(z.imag)
        re2 = (z * z).real
        disc = (om * s_im) ** 2 + 4.0 * re2 * T / t
        xi_max = max(xi_max, (om * s_im + np.sqrt(disc)) / re2)
    zmod = max(abs(zp), abs(zm))
    rate = t * zmod * 0.5 * (om + xi_max * zmod) + 0.5 * xtent * zmod + 2.0
    n = int(np.ceil(2.0 * xi_max * rate / phase_res))
    n = min(max(n, 41), max_nodes)
    # n = 1 (mod 4): odd count with the kink node surviving stride-2
    n += (-(n - 1)) % 4
    return ContourSpec(kind="small", alpha=a, b=b, omega0=om,
                       zeta_plus=zp, zeta_minus=zm, xi_max=xi_max, n_nodes=n)


def check_admissible(prof, lam_nodes, branch_tol=ev.BRANCH_TOL):
    """Node-wise admissibility: off both branch half-lines, ends high up."""
    co = ev.coeffs_for(prof)
    lam_nodes = np.asarray(lam_nodes, dtype=complex)
    dist = ev.branch_distances(co, lam_nodes)
    if np.any(dist < branch_tol):
        raise InvalidContourError("contour node too close to a branch half-line")
    if not (lam_nodes[0].imag < -0.5 and lam_nodes[-1].imag > 0.5):
        raise InvalidContourError("contour ends do not reach large |Im lambda|")


# ---------------------------------------------------------------------------
# Kernel evaluation on frames


class KernelFrame:
    """An evans.Frame with the connection data needed for Green kernels."""

    def __init__(self, prof, lam, n_sub=None):
        self.prof = prof
        self.co = ev.coeffs_for(prof)
        self.frame = ev.build_frame(prof, lam, n_sub=n_sub, outward=True)
        self.lam = self.frame.lam
        sc = ev.scattering_frame(self.frame)
        fr, co = self.frame, self.co
        d = fr.D_val * np.exp(fr.D_log)
        self.D = d
        ed = fr.ed
        # entire reflection quotients rho/D (no pole at Evans roots)
        self.rho_r_over_D = np.exp(-co.I_l) / ed.gap_l
        self.rho_l_over_D = np.exp(co.I_r) / ed.gap_r
        self.trho_r_over_D = np.exp(co.I_r) / ed.gap_l
        self.trho_l_over_D = np.exp(-co.I_l) / ed.gap_r
        self.tau_r_over_D = sc["tau_r"] / d
        self.tau_l_over_D = sc["tau_l"] / d
        self.ttau_r_over_D = sc["tilde_tau_r"] / d
        self.ttau_l_over_D = sc["tilde_tau_l"] / d
        self.e_Il = np.exp(co.I_l)
        self.e_mIr = np.exp(-co.I_r)

    def _mf(self, name, i):
        v1, _, lg = self.frame.manifold_at(name, i)
        return v1, lg

    def _dual(self, name, i):
        """First component and log of a dual manifold tilde-V = phi V."""
        side = "right" if name in ("rs", "ru") else "left"
        v1, lg = self._mf(name, i)
        return v1, lg + self.frame.dual_log_factor(side, i)

    def pieces(self, ix, iy, form=None):
        """Kernel addends at grid indices (ix, iy) for every lambda.

        Returns (transmission, reflection): their sum is G(lam; x, y); the
        split follows the same-side re-expansion (reflection = rho-type
        term, zero for opposite-side pairs).  form forces the x>y ("gt") or
        x<y ("lt") representation; at ix == iy both are valid and agree up
        to the kernel's continuity defect.
        """
        c = self.co.center
        sx = 1 if ix >= c else -1
        sy = 1 if iy >= c else -1
        if form is None:
            form = "gt" if ix >= iy else "lt"
        if form == "gt":
            if sx > 0 and sy < 0:
                a1, la = self._mf("rs", ix)
                b1, lb = self._dual("lu", iy)
                trans = self.e_Il * a1 * b1 * np.exp(la + lb - self.frame.D_log) / self.frame.D_val
                refl = np.zeros_like(trans)
            elif sy > 0:  # x >= y >= 0
                a1, la = self._mf("rs", ix)
                t1, lt = self._dual("rs", iy)
                u1, lu = self._dual("ru", iy)
                trans = self.e_Il * self.ttau_l_over_D * a1 * t1 * np.exp(la + lt)
                refl = self.e_Il * self.trho_l_over_D * a1 * u1 * np.exp(la + lu)
            else:  # 0 > x >= y
                b1, lb = self._dual("lu", iy)
                t1, lt = self._mf("lu", ix)
                s1, ls = self._mf("ls", ix)
                trans = self.e_Il * self.tau_r_over_D * t1 * b1 * np.exp(lt + lb)
                refl = self.e_Il * self.rho_r_over_D * s1 * b1 * np.exp(ls + lb)
        else:
            if sx < 0 and sy > 0:
                a1, la = self._mf("lu", ix)
                b1, lb = self._dual("rs", iy)
                trans = self.e_mIr * a1 * b1 * np.exp(la + lb - self.frame.D_log) / self.frame.D_val
                refl = np.zeros_like(trans)
            elif sx > 0:  # y > x >= 0
                b1, lb = self._dual("rs", iy)
                t1, lt = self._mf("rs", ix)
                u1, lu = self._mf("ru", ix)
                trans = self.e_mIr * self.tau_l_over_D * t1 * b1 * np.exp(lt + lb)
                refl = self.e_mIr * self.rho_l_over_D * u1 * b1 * np.exp(lu + lb)
            else:  # x < y <= 0
                a1, la = self._mf("lu", ix)
                t1, lt = self._dual("lu", iy)
                s1, ls = self._dual("ls", iy)
                trans = self.e_mIr * self.ttau_r_over_D * a1 * t1 * np.exp(la + lt)
                refl = self.e_mIr * self.trho_r_over_D * a1 * s1 * np.exp(la + ls)
        return trans, refl

    def kernel(self, ix, iy, form=None):
        trans, refl = self.pieces(ix, iy, form=form)
        return trans + refl

    def flux_vector(self, ix, iy, form=None):
        """Both components of the x-solution at ix for source at iy.

        Used by the delta-matching checks: the second component is the flux
        coordinate, which jumps by one across x = y.
        """
        if form is None:
            form = "gt" if ix >= iy else "lt"
        if form == "gt":
            v1, v2, lg = self.frame.manifold_at("rs", ix)
            b1, lb = self._dual("lu", iy)
            fac = self.e_Il * b1 * np.exp(lg + lb - self.frame.D_log) / self.frame.D_val
            return fac * v1, fac * v2
        v1, v2, lg = self.frame.manifold_at("lu", ix)
        b1, lb = self._dual("rs", iy)
        fac = self.e_mIr * b1 * np.exp(lg + lb - self.frame.D_log) / self.frame.D_val
        return fac * v1, fac * v2


_AMP_CACHE = {}


def phase_amplitudes(prof):
    """(a_r, a_l): V^{rs}(0,.)_1 = a_r U', V^{lu}(0,.)_1 = a_l U'.

    Computed as the median ratio over the core; the constancy defect is
    returned for enforcement by callers.
    """
    key = id(prof)
    hit = _AMP_CACHE.get(key)
    if hit is not None and hit[0] is prof:
        return hit[1]
    co = ev.coeffs_for(prof)
    frame = ev.build_frame(prof, np.array([0.0], dtype=complex))
    x = co.x
    mask = np.abs(prof.du_eps) > 1e-8 * np.max(np.abs(prof.du_eps))
    out = {}
    for name_key, name in (("a_r", "rs"), ("a_l", "lu")):
        V1, _, LOG = getattr(frame.frame if hasattr(frame, "frame") else frame, name)
        vals = V1[:, 0] * np.exp(LOG[:, 0])
        ratio = vals[mask] / prof.du_eps[mask]
        med = np.median(ratio.real)
        defect = float(np.max(np.abs(ratio - med)) / abs(med))
        out[name_key] = float(med)
        out[name_key + "_defect"] = defect
    if len(_AMP_CACHE) > 8:
        _AMP_CACHE.pop(next(iter(_AMP_CACHE)))
    _AMP_CACHE[key] = (prof, out)
    return out


# ---------------------------------------------------------------------------
# Quadrature drivers


@dataclass(frozen=True)
class GreenOptions:
    """Knobs for the contour quadrature (all recorded in run metadata)."""

    tail_tol: float = 1e-10
    phase_res: float = 0.35
    zeta_scale: float = 1.0
    hf_factor: float = 1.5
    chunk: int = 256
    t_min: float = 0.01


DEFAULT_OPTIONS = GreenOptions()


def _trap_weights(xi):
    w = np.full(xi.shape[0], xi[1] - xi[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _trap_weights_coarse(xi):
    """Stride-2 trapezoid weights on the full index set (zero on odd nodes).

    Requires len(xi) = 1 (mod 4) so the contour kink node is retained; the
    fine/coarse pair feeds Richardson extrapolation, which removes the
    O(dxi^2) error (dominated by the slope kink at xi = 0) and yields the
    resolution estimate.
    """
    n = xi.shape[0]
    if (n - 1) % 4 != 0:
        raise InvalidContourError("node count must be 1 (mod 4)")
    w = np.zeros(n)
    w[::2] = 2.0 * (xi[1] - xi[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _richardson(fine, coarse):
    """Extrapolated value and resolution estimate from the trapezoid pair."""
    return (4.0 * fine - coarse) / 3.0, np.abs(fine - coarse) / 3.0


def _richardson_weights(xi):
    """One-pass weights whose plain sum equals the extrapolated quadrature."""
    return (4.0 * _trap_weights(xi) - _trap_weights_coarse(xi)) / 3.0


def snap_index(prof, x):
    return int(np.argmin(np.abs(prof.grid.nodes - x)))


def _node_integrands(prof, spec, t, ix, iy, chunk=256):
    """Per-node kernel integrand values F_k = G(Lambda_k; x, y) dLambda_k e^{Lambda_k t}/(2 pi i)."""
    xi, lam, dlam = contour_points(spec, t)
    check_admissible(prof, lam)
    per_node = np.empty(lam.shape[0], dtype=complex)
    for s in range(0, lam.shape[0], chunk):
        sl = slice(s, min(s + chunk, lam.shape[0]))
        kf = KernelFrame(prof, lam[sl])
        per_node[sl] = kf.kernel(ix, iy) * dlam[sl] * np.exp(lam[sl] * t) / (2j * np.pi)
    return xi, per_node


def _assemble(xi, per_node):
    """Richardson-extrapolated quadrature with tail/resolution/imag estimate."""
    wf = _trap_weights(xi)
    wc = _trap_weights_coarse(xi)
    fine = np.sum(wf * per_node)
    coarse = np.sum(wc * per_node)
    value, res_est = _richardson(fine, coarse)
    dxi = xi[1] - xi[0]
    tail_est = 4.0 * dxi * (np.abs(per_node[0]) + np.abs(per_node[-1]))
    est = float(res_est + tail_est + abs(value.imag))
    return float(value.real), est


def time_green(prof, t, x, y, side=None, spec=None, fam=None,
               opts=DEFAULT_OPTIONS, tol=None):
    """(1/2 pi i) oint e^{lam t} G(lam; x, y) dlam with an error estimate.

    Returns (value, estimate); raises ExtendContourError when the estimate
    exceeds tol.  t below opts.t_min is refused (contour cost blows up;
    callers use the method-of-lines oracle there).
    """
    if t < opts.t_min:
        raise ExtendContourError(f"t={t} below the contour quadrature floor")
    ix, iy = snap_index(prof, x), snap_index(prof, y)
    if fam is None:
        fam = curve_family(prof, opts.zeta_scale, opts.hf_factor)
    if spec is None:
        if side is None:
            side = "r" if iy >= prof.grid.center else "l"
        spec = family_spec(prof, fam, side, t, abs(x) + abs(y) + 2.0,
                           opts.tail_tol, opts.phase_res)
    xi, per_node = _node_integrands(prof, spec, t, ix, iy, opts.chunk)
    value, est = _assemble(xi, per_node)
    if tol is not None and est > tol:
        raise ExtendContourError(f"truncation estimate {est:.2e} > tol {tol:.2e}")
    return value, est


def spectral_green(prof, lam, x, y, form=None):
    """Resolvent kernel value at one (lam, x, y), snapped to the grid."""
    ix, iy = snap_index(prof, x), snap_index(prof, y)
    kf = KernelFrame(prof, np.array([lam], dtype=complex))
    return complex(kf.kernel(ix, iy, form=form)[0])


def spectral_green_row(prof, lam, y):
    """G(lam; x_i, y) over the whole grid (one frame, all x at once)."""
    kf = KernelFrame(prof, np.array([lam], dtype=complex))
    iy = snap_index(prof, y)
    n = prof.grid.n
    out = np.empty(n, dtype=complex)
    for i in range(n):
        out[i] = kf.kernel(i, iy)[0]
    return out


def spectral_green_jump(prof, lam, y):
    """Left/right limits of the kernel and its flux coordinate at x = y."""
    ix = snap_index(prof, y)
    kf = KernelFrame(prof, np.array([lam], dtype=complex))
    g_right = kf.kernel(ix, ix, form="gt")[0]
    g_left = kf.kernel(ix, ix, form="lt")[0]
    _, f_right = kf.flux_vector(ix, ix, form="gt")
    _, f_left = kf.flux_vector(ix, ix, form="lt")
    return {
        "value_right": complex(g_right),
        "value_left": complex(g_left),
        "continuity_defect": float(abs(g_right - g_left) / max(abs(g_left), 1e-300)),
        "flux_jump": complex(f_right[0] - f_left[0]),
    }


# ---------------------------------------------------------------------------
# Pointwise/essential splitting and the phase kernel


def _zone(prof, fam, t, x, y):
    """Zone label for the splitting at one (t, x, y)."""
    c = prof.grid.center
    sx = 1 if snap_index(prof, x) >= c else -1
    sy = 1 if snap_index(prof, y) >= c else -1
    if sx * sy < 0:
        return "crossing"
    if (sy > 0 and y >= fam.om_hf_r * t) or (sy < 0 and y <= -fam.om_hf_l * t):
        return "outside-cone"
    return "same-side-cone"


def split_time_green(prof, t, pairs, fam=None, opts=DEFAULT_OPTIONS):
    """Total/pointwise/essential/phase decomposition at (x, y) samples.

    pairs: sequence of (x, y).  Returns a dict of arrays over the samples:
    G_total, G_pt, G_ess, G_p (phase kernel at y), G_pt_tilde, dG_p_dt, and
    the zone labels.  Additivity G_total = G_pt + G_ess and the phase
    reconstruction G_pt_tilde = G_pt - U'(x) G_p(y) hold exactly on the
    shared quadrature nodes by construction.
    """
    if fam is None:
        fam = curve_family(prof, opts.zeta_scale, opts.hf_factor)
    pairs = [(float(x), float(y)) for x, y in pairs]
    amps = phase_amplitudes(prof)
    npair = len(pairs)
    out = {k: np.zeros(npair) for k in
           ("G_total", "G_pt", "G_ess", "G_p", "dG_p_dt", "G_pt_tilde")}
    zones = []
    # group by curve side (chosen by the sign of y)
    c = prof.grid.center
    for side in ("r", "l"):
        idxs = [k for k, (x, y) in enumerate(pairs)
                if (snap_index(prof, y) >= c) == (side == "r")]
        if not idxs:
            continue
        xtent = max(abs(x) + abs(y) for x, y in (pairs[k] for k in idxs)) + 2.0
        spec = family_spec(prof, fam, side, t, xtent, opts.tail_tol, opts.phase_res)
        xi, lam, dlam = contour_points(spec, t)
        check_admissible(prof, lam)
        w = _richardson_weights(xi)
        coef = w * dlam * np.exp(lam * t) / (2j * np.pi)
        lf_mask = np.abs(xi) <= fam.xi_hf
        a_amp = amps["a_l"] if side == "r" else amps["a_r"]
        pref = np.exp(-ev.coeffs_for(prof).I_r) if side == "r" else np.exp(ev.coeffs_for(prof).I_l)
        for s in range(0, lam.shape[0], opts.chunk):
            sl = slice(s, min(s + opts.chunk, lam.shape[0]))
            kf = KernelFrame(prof, lam[sl])
            cf = coef[sl]
            mlf = lf_mask[sl]
            for k in idxs:
                x, y = pairs[k]
                ix, iy = snap_index(prof, x), snap_index(prof, y)
                zone = _zone(prof, fam, t, x, y)
                trans, refl = kf.pieces(ix, iy)
                tot = trans + refl
                out["G_total"][k] += np.sum(tot * cf).real
                if zone == "crossing":
                    out["G_pt"][k] += np.sum(tot * cf).real
                elif zone == "outside-cone":
                    out["G_ess"][k] += np.sum(tot * cf).real
                else:
                    out["G_pt"][k] += np.sum(trans * cf * mlf).real
                    out["G_ess"][k] += np.sum(refl * cf * mlf).real
                    out["G_ess"][k] += np.sum(tot * cf * (~mlf)).real
                # phase kernel (zero outside the cone)
                if zone != "outside-cone":
                    if side == "r":
                        p1, pl = kf._dual("rs", iy)
                    else:
                        p1, pl = kf._dual("lu", iy)
                    ph = pref * a_amp * p1 * np.exp(pl - kf.frame.D_log) / kf.frame.D_val
                    out["G_p"][k] += np.sum(ph * cf * mlf).real
                    out["dG_p_dt"][k] += np.sum(ph * cf * mlf * lam[sl]).real
    for k, (x, y) in enumerate(pairs):
        zones.append(_zone(prof, fam, t, x, y))
        ix = snap_index(prof, x)
        out["G_pt_tilde"][k] = out["G_pt"][k] - prof.du_eps[ix] * out["G_p"][k]
    out["zone"] = zones
    out["pairs"] = pairs
    return out


def phase_kernel(prof, t, ys, fam=None, opts=DEFAULT_OPTIONS):
    """G^p_t(y) and its time derivative at an array of y samples.

    Zero outside the characteristic cone -om_hf_l t < y < om_hf_r t; inside,
    the low-frequency arc of the y-side curve is integrated against the
    dual decaying manifold, scaled by the wave-derivative amplitude of the
    opposite side.
    """
    if fam is None:
        fam = curve_family(prof, opts.zeta_scale, opts.hf_factor)
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    amps = phase_amplitudes(prof)
    co = ev.coeffs_for(prof)
    g_p = np.zeros(ys.shape[0])
    dg_p = np.zeros(ys.shape[0])
    c = prof.grid.center
    for side in ("r", "l"):
        if side == "r":
            sel = [k for k, y in enumerate(ys) if snap_index(prof, y) >= c
                   and y < fam.om_hf_r * t]
            a_amp, pref = amps["a_l"], np.exp(-co.I_r)
            name = "rs"
        else:
            sel = [k for k, y in enumerate(ys) if snap_index(prof, y) < c
                   and y > -fam.om_hf_l * t]
            a_amp, pref = amps["a_r"], np.exp(co.I_l)
            name = "lu"
        if not sel:
            continue
        xtent = max(abs(ys[k]) for k in sel) + 2.0
        spec = family_spec(prof, fam, side, t, xtent, opts.tail_tol, opts.phase_res)
        xi, lam, dlam = contour_points(spec, t)
        check_admissible(prof, lam)
        w = _richardson_weights(xi)
        lf = np.abs(xi) <= fam.xi_hf
        coef = (w * dlam * np.exp(lam * t) / (2j * np.pi)) * lf
        for s in range(0, lam.shape[0], opts.chunk):
            sl = slice(s, min(s + opts.chunk, lam.shape[0]))
            if not np.any(lf[sl]):
                continue
            kf = KernelFrame(prof, lam[sl])
            for k in sel:
                iy = snap_index(prof, ys[k])
                p1, pl = kf._dual(name, iy)
                ph = pref * a_amp * p1 * np.exp(pl - kf.frame.D_log) / kf.frame.D_val
                g_p[k] += np.sum(ph * coef[sl]).real
                dg_p[k] += np.sum(ph * coef[sl] * lam[sl]).real
    return {"G_p": g_p, "dG_p_dt": dg_p}


# ---------------------------------------------------------------------------
# Propagator action


def _renormalized_cumtrap(v1hat, mlog, w, h):
    """J-hat(k) = e^{-mlog_k} * trapz_{<=k} of v1hat e^{mlog} w, stably.

    All arrays are (nx, m) in traversal order; the frame logs mlog grow
    along the sweep, so old mass is damped and the recursion is stable.
    """
    nx = v1hat.shape[0]
    out = np.empty_like(v1hat)
    out[0] = 0.0
    prev = out[0].copy()
    for k in range(1, nx):
        damp = np.exp(mlog[k - 1] - mlog[k])
        prev = prev * damp + 0.5 * h * (v1hat[k - 1] * w[k - 1] * damp
                                        + v1hat[k] * w[k])
        out[k] = prev
    return out


def apply_propagator(prof, t, w0, fam=None, opts=DEFAULT_OPTIONS, side="r",
                     xtent=None):
    """S(t) w0 on the grid by resolvent actions along the contour.

    The resolvent action at each node is computed by variation of constants
    with running renormalized cumulative integrals, so the cost per node is
    one pass over the grid and the whole action is O(n_nodes * n_grid).
    xtent bounds the phase-resolution scale |x - y| over which the result
    must be accurate: the kernel localizes the action near the data support,
    so the default uses the support extent of w0 plus a decay margin.
    """
    if t < opts.t_min:
        raise ExtendContourError(f"t={t} below the contour quadrature floor")
    if fam is None:
        fam = curve_family(prof, opts.zeta_scale, opts.hf_factor)
    co = ev.coeffs_for(prof)
    w0 = np.asarray(w0, dtype=float)
    if xtent is None:
        live = np.abs(w0) > 1e-13 * max(np.max(np.abs(w0)), 1e-300)
        x_live = prof.grid.nodes[live]
        supp = (x_live[-1] - x_live[0]) if x_live.size else 0.0
        speed = max(abs(co.a_r), abs(co.a_l))
        xtent = min(2.0 * prof.grid.half_width, supp + 2.0 * speed * t + 40.0)
    spec = family_spec(prof, fam, side, t, xtent, opts.tail_tol, opts.phase_res)
    xi, lam, dlam = contour_points(spec, t)
    check_admissible(prof, lam)
    wq = _richardson_weights(xi)
    coef_full = wq * dlam * np.exp(lam * t) / (2j * np.pi)
    h = prof.grid.spacing
    n = co.n
    result = np.zeros(n)
    dual_r = co.I_r - co.C_a   # log phi_r(x)
    dual_l = -co.I_l - co.C_a  # log phi_l(x)
    for s in range(0, lam.shape[0], opts.chunk):
        sl = slice(s, min(s + opts.chunk, lam.shape[0]))
        frame = ev.build_frame(prof, lam[sl], store=True)
        R1, _, RL = frame.rs
        L1, _, LL = frame.lu
        # J_l(x) = int_{-L}^x tilde-v^{lu}_1 w0, in the frame of its own logs
        ml = LL + dual_l[:, None]
        J_l = _renormalized_cumtrap(L1, ml, w0[:, None], h)
        # J_r(x) = int_x^{L} tilde-v^{rs}_1 w0: traverse right-to-left
        mr = RL + dual_r[:, None]
        J_r = _renormalized_cumtrap(R1[::-1], mr[::-1], w0[::-1, None], h)[::-1]
        d_val, d_log = frame.D_val, frame.D_log
        expo_l = RL + ml - d_log[None, :]
        expo_r = LL + mr - d_log[None, :]
        u = (np.exp(co.I_l) * R1 * J_l * np.exp(expo_l)
             + np.exp(-co.I_r) * L1 * J_r * np.exp(expo_r)) / d_val[None, :]
        result += (u @ coef_full[sl]).real
    return result


# ---------------------------------------------------------------------------
# Method-of-lines oracle


def mol_operator(prof, order=2):
    """Sparse discretization of v -> v'' - ((f'(U)-sigma) v)' + eps g'(U) v."""
    co = ev.coeffs_for(prof)
    n = co.n
    h = prof.grid.spacing
    a = co.a_nodes
    b = co.b_nodes
    main = np.full(n, -2.0 / h**2) + b
    up = np.full(n - 1, 1.0 / h**2) - a[1:] / (2.0 * h)
    dn = np.full(n - 1, 1.0 / h**2) + a[:-1] / (2.0 * h)
    mat = sp.diags([dn, main, up], [-1, 0, 1], format="csc")
    return mat


def mol_propagate(prof, w0, t):
    """Dirichlet method-of-lines solve of w_t = L w by Krylov exponential."""
    mat = mol_operator(prof)
    return expm_multiply(mat * t, np.asarray(w0, dtype=float))


def mol_kernel_row(prof, t, x):
    """G_t(x, .) over the grid: one transpose-propagated delta column."""
    mat = mol_operator(prof)
    e_x = np.zeros(prof.grid.n)
    e_x[snap_index(prof, x)] = 1.0 / prof.grid.spacing
    return expm_multiply(mat.T * t, e_x)


# ---------------------------------------------------------------------------
# Sampled pointwise bounds (report only)


def _gauss(z, theta, t):
    return np.exp(-theta * z * z / t)


def sample_pointwise_bounds(prof, triples, fam=None, opts=DEFAULT_OPTIONS):
    """Smallest constants making the kernel-piece bounds hold on the samples.

    Bounds are evaluated with the fixed (theta, omega) = (0.1 min(theta_0),
    0.5 eps omega_inf); the report carries, per bound, the required constant
    on the sample set.  Callers assess stability under sample refinement.
    """
    from .model import decay_rates

    if fam is None:
        fam = curve_family(prof, opts.zeta_scale, opts.hf_factor)
    co = ev.coeffs_for(prof)
    law, shock = prof.law, prof.shock
    r0 = decay_rates(law, shock, shock.sigma0, 0.0)
    theta = 0.1 * min(r0.theta_l, r0.theta_r)
    omega_inf = check_endstate_stability(law, shock)["omega_inf"]
    gap = prof.eps * omega_inf
    omega = 0.5 * gap
    rows = []
    by_t = {}
    for (t, x, y) in triples:
        by_t.setdefault(float(t), []).append((float(x), float(y)))
    for t, pairs in sorted(by_t.items()):
        smp = split_time_green(prof, t, pairs, fam=fam, opts=opts)
        for k, (x, y) in enumerate(pairs):
            sqt = np.sqrt(t)
            env_pt = np.exp(omega * t) * np.exp(-theta * abs(x)) / sqt * _gauss(y, theta, t)
            env_tpt = (np.exp(-gap * t) * np.exp(-theta * abs(x)) / sqt
                       * (_gauss(y - co.a_r * t, theta, t) + _gauss(y + co.a_l * t, theta, t))
                       + np.exp(-omega * t) * np.exp(-theta * abs(x) - theta * abs(x - y)))
            env_ess = (float(abs(x - y) <= abs(y)) * np.exp(-gap * t) / sqt
                       * (_gauss(x - y - co.a_r * t, theta, t) + _gauss(x - y - co.a_l * t, theta, t))
                       + float(abs(x - y) >= abs(y)) * np.exp(-omega * t) / sqt * _gauss(y, theta, t))
            env_p = np.exp(omega * t) / sqt * _gauss(y, theta, t)
            env_dp = (np.exp(-gap * t) / sqt
                      * (_gauss(y - co.a_r * t, theta, t) + _gauss(y + co.a_l * t, theta, t)))
            rows.append({
                "t": t, "x": x, "y": y, "zone": smp["zone"][k],
                "C_pt": abs(smp["G_pt"][k]) / env_pt,
                "C_pt_tilde": abs(smp["G_pt_tilde"][k]) / env_tpt,
                "C_ess": abs(smp["G_ess"][k]) / env_ess if env_ess > 0 else 0.0,
                "C_p": abs(smp["G_p"][k]) / env_p,
                "C_dp": abs(smp["dG_p_dt"][k]) / env_dp,
            })
    agg = {key: max(r[key] for r in rows) for key in
           ("C_pt", "C_pt_tilde", "C_ess", "C_p", "C_dp")}
    return {"rows": rows, "constants": agg,
            "theta": float(theta), "omega": float(omega)}
