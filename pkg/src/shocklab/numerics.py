"""Shared numerical kernels: quadrature, stencils, small linear algebra.

Everything here operates on uniform grids.  Cumulative integrals come in a
fourth-order flavour because second-order cumulative trapezoids leave
Euler-Maclaurin boundary terms that are too large for the profile and
Wronskian consistency checks downstream.
"""

import numpy as np


def quad4_increments(values, h):
    """Per-interval integrals by the cubic four-point rule, fourth order.

    Interior intervals use h/24 * (-f[i-1] + 13 f[i] + 13 f[i+1] - f[i+2]);
    the end intervals use the one-sided cubic rule.  Shape (n-1,).
    """
    f = np.asarray(values)
    n = f.shape[0]
    if n < 4:
        raise ValueError("quadrature needs at least 4 nodes")
    inc = np.empty(n - 1, dtype=np.result_type(f.dtype, np.float64))
    inc[1:-1] = (h / 24.0) * (-f[:-3] + 13.0 * f[1:-2] + 13.0 * f[2:-1] - f[3:])
    inc[0] = (h / 24.0) * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
    inc[-1] = (h / 24.0) * (f[-4] - 5.0 * f[-3] + 19.0 * f[-2] + 9.0 * f[-1])
    return inc


def cumquad4(values, h):
    """Cumulative integral from the first node, fourth order; zero at index 0."""
    inc = quad4_increments(values, h)
    out = np.empty(inc.shape[0] + 1, dtype=inc.dtype)
    out[0] = 0.0
    np.cumsum(inc, out=out[1:])
    return out


def cumquad4_right(values, h):
    """Right-anchored cumulative integral R[i] = integral from x_i to x_end.

    Accumulated from the right end so that tail values keep relative (not
    just absolute) accuracy when the integrand decays toward the end.
    """
    inc = quad4_increments(values, h)
    out = np.empty(inc.shape[0] + 1, dtype=inc.dtype)
    out[-1] = 0.0
    out[:-1] = np.cumsum(inc[::-1])[::-1]
    return out


def cumquad4_anchored(values, h, i0):
    """Cumulative integral anchored to zero at node index ``i0``."""
    c = cumquad4(values, h)
    return c - c[i0]


def quad4(values, h):
    """Definite integral over the whole grid, fourth order."""
    c = cumquad4(values, h)
    return c[-1]


def fd1_centered(values, h):
    """First derivative, second-order centered, one-sided at the ends."""
    f = np.asarray(values, dtype=float)
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
    d[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
    return d


def fd2_centered(values, h):
    """Second derivative, second-order centered, one-sided at the ends."""
    f = np.asarray(values, dtype=float)
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / (h * h)
    d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / (h * h)
    d[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / (h * h)
    return d


def fd1_4th_interior(values, h):
    """First derivative with the 5-point fourth-order stencil.

    Valid on indices 2..n-3; the two cells at each end are filled with the
    centered second-order value (callers that need 4th order stay interior).
    """
    f = np.asarray(values)
    d = np.empty(f.shape, dtype=np.result_type(f.dtype, np.float64))
    d[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    d[1] = (f[2] - f[0]) / (2.0 * h)
    d[-2] = (f[-1] - f[-3]) / (2.0 * h)
    d[0] = (f[1] - f[0]) / h
    d[-1] = (f[-1] - f[-2]) / h
    return d


def fd2_4th_interior(values, h):
    """Second derivative with the 5-point fourth-order stencil (see fd1_4th)."""
    f = np.asarray(values)
    d = np.empty(f.shape, dtype=np.result_type(f.dtype, np.float64))
    d[2:-2] = (-f[:-4] + 16.0 * f[1:-3] - 30.0 * f[2:-2] + 16.0 * f[3:-1] - f[4:]) / (12.0 * h * h)
    d[1] = (f[2] - 2.0 * f[1] + f[0]) / (h * h)
    d[-2] = (f[-1] - 2.0 * f[-2] + f[-3]) / (h * h)
    d[0] = d[1]
    d[-1] = d[-2]
    return d


def hermite_segment(values, derivs, theta):
    """Evaluate the cubic Hermite interpolant at offset ``theta`` in (0,1).

    Returns one value per segment: H_i = interpolant on [x_i, x_{i+1}]
    evaluated at x_i + theta*h, built from nodal values and exact nodal
    derivatives (times h).  Shape (n-1,).
    """
    u0 = values[:-1]
    u1 = values[1:]
    m0 = derivs[:-1]
    m1 = derivs[1:]
    t2 = theta * theta
    t3 = t2 * theta
    h00 = 2.0 * t3 - 3.0 * t2 + 1.0
    h10 = t3 - 2.0 * t2 + theta
    h01 = -2.0 * t3 + 3.0 * t2
    h11 = t3 - t2
    return h00 * u0 + h10 * m0 + h01 * u1 + h11 * m1


def solve2x2(a11, a12, a21, a22, b1, b2):
    """Solve batched complex 2x2 systems by Cramer's rule."""
    det = a11 * a22 - a12 * a21
    x1 = (b1 * a22 - a12 * b2) / det
    x2 = (a11 * b2 - b1 * a21) / det
    return x1, x2


def _sinhc(s):
    """sinh(s)/s with a series fallback near zero (batched, complex)."""
    s = np.asarray(s, dtype=complex)
    small = np.abs(s) < 1e-4
    safe = np.where(small, 1.0, s)
    out = np.sinh(safe) / safe
    s2 = s * s
    series = 1.0 + s2 / 6.0 + s2 * s2 / 120.0
    return np.where(small, series, out)


def expm2x2_traceless(m11, m12, m21, m22):
    """exp of batched traceless complex 2x2 matrices, entrywise closed form.

    For traceless M, exp(M) = cosh(s) I + sinh(s)/s * M with s^2 = -det M.
    Returns the four entries of exp(M).
    """
    s2 = m11 * m11 + m12 * m21  # -det for traceless M
    s = np.sqrt(s2.astype(complex))
    c = np.cosh(s)
    sn = _sinhc(s)
    return c + sn * m11, sn * m12, sn * m21, c + sn * m22


def linfit_log(t, values):
    """Least-squares slope/intercept of log(values) against t.

    Returns (rate, amplitude, rms_residual) with rate = -slope, so that
    values ~ amplitude * exp(-rate * t).
    """
    t = np.asarray(t, dtype=float)
    y = np.log(np.asarray(values, dtype=float))
    a = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    return -float(coef[0]), float(np.exp(coef[1])), rms
