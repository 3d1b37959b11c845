"""Adaptive-quadrature evaluation of the feature integrals.

These routines integrate the defining expressions numerically (adaptive
Gauss-Kronrod via scipy, with infinite-domain transforms) and exist only
to validate the closed forms in :mod:`convspec.integrals`.  They are
orders of magnitude slower and must never be used on the inference path.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate as _si

from .model import deq_kernel

__all__ = [
    "quad_I_hx",
    "quad_I_hx_cross",
    "quad_I_uz_entry",
    "quad_I_hz_entry",
    "quad_I_ux_entry",
    "quad_I_ux_cross_entry",
]

_QUAD_OPTS = dict(epsabs=1e-12, epsrel=1e-10, limit=400)


def _upper(spec, t):
    return t if spec.variant in ("cgpcm", "rgpcm") else np.inf


def _window_sq(spec, s):
    if spec.variant == "rgpcm":
        return spec.alpha_tilde2 * np.exp(-2.0 * spec.alpha * np.abs(s))
    return deq_kernel(spec, s, s)


def _breaks(lo, hi, *points):
    return sorted(p for p in points if np.isfinite(p) and lo < p < hi)


def quad_I_hx(spec, t=0.0):
    lo = -np.inf
    hi = _upper(spec, t)
    val, _ = _si.quad(lambda tau: _window_sq(spec, t - tau), lo, hi,
                      **_QUAD_OPTS)
    return val


def quad_I_hx_cross(spec, r, t=0.0):
    t2 = t - r
    if spec.variant == "gpcm":
        val, _ = _si.quad(lambda tau: deq_kernel(spec, t - tau, t2 - tau),
                          -np.inf, np.inf, **_QUAD_OPTS)
        return val
    hi = min(t, t2)
    if spec.variant == "cgpcm":
        val, _ = _si.quad(lambda tau: deq_kernel(spec, t - tau, t2 - tau),
                          -np.inf, hi, **_QUAD_OPTS)
        return val
    a_t = np.sqrt(spec.alpha_tilde2)
    val, _ = _si.quad(
        lambda tau: a_t**2 * np.exp(-spec.alpha * (np.abs(t - tau)
                                                   + np.abs(t2 - tau))),
        -np.inf, hi, **_QUAD_OPTS)
    return val


def quad_I_uz_entry(spec, cov, t, m, k):
    if spec.variant in ("gpcm", "cgpcm"):
        def f(tau):
            return (deq_kernel(spec, t - tau, cov.t_u[m])
                    * cov.k_z(np.asarray(tau))[..., k])
        hi = _upper(spec, t)
        val, _ = _si.quad(f, -np.inf, hi, **_QUAD_OPTS)
        return val

    a, b = spec.interval
    tu = cov.t_u[m]
    a_t = np.sqrt(spec.alpha_tilde2)
    g_t = np.sqrt(spec.gamma_tilde2)

    def f(tau):
        w = a_t * np.exp(-spec.alpha * abs(tau))
        ku = g_t * np.exp(-spec.gamma * (tu - tau)) if tau <= tu else 0.0
        return w * ku * cov.k_z(np.asarray(t - tau))[..., k]

    pts = _breaks(0.0, tu, t - b, t - a)
    val, _ = _si.quad(f, 0.0, tu, points=pts or None, **_QUAD_OPTS)
    return val


def quad_I_hz_entry(spec, cov, t, m, k):
    if spec.variant in ("gpcm", "cgpcm"):
        def f(tau2, tau1):
            return (deq_kernel(spec, t - tau1, t - tau2)
                    * cov.k_z(np.asarray(tau2))[..., m]
                    * cov.k_z(np.asarray(tau1))[..., k])
        hi = _upper(spec, t)
        val, _ = _si.dblquad(f, -np.inf, hi, -np.inf, hi,
                             epsabs=1e-11, epsrel=1e-9)
        return val

    a, b = spec.interval

    def f(tau):
        w2 = _window_sq(spec, t - tau)
        kz = cov.k_z(np.asarray(tau))
        return w2 * kz[..., m] * kz[..., k]

    # Split at the feature-regime boundaries; quad cannot mix break
    # points with an infinite lower limit.
    segs = [-np.inf] + _breaks(-np.inf, t, a, b) + [t]
    val = 0.0
    for lo, hi in zip(segs[:-1], segs[1:]):
        part, _ = _si.quad(f, lo, hi, **_QUAD_OPTS)
        val += part
    return val


def quad_I_ux_entry(spec, cov, m, n, t=0.0):
    if spec.variant == "gpcm":
        def f(s):
            return (deq_kernel(spec, s, cov.t_u[m])
                    * deq_kernel(spec, s, cov.t_u[n]))
        val, _ = _si.quad(f, -np.inf, np.inf, **_QUAD_OPTS)
        return val
    if spec.variant == "cgpcm":
        def f(s):
            return (deq_kernel(spec, s, cov.t_u[m])
                    * deq_kernel(spec, s, cov.t_u[n]))
        val, _ = _si.quad(f, 0.0, np.inf, **_QUAD_OPTS)
        return val
    return quad_I_ux_cross_entry(spec, cov, 0.0, m, n)


def quad_I_ux_cross_entry(spec, cov, r, m, n):
    if spec.variant in ("gpcm", "cgpcm"):
        def f(s):
            return (deq_kernel(spec, s, cov.t_u[m])
                    * deq_kernel(spec, s - r, cov.t_u[n]))
        lo = -np.inf if spec.variant == "gpcm" else max(0.0, r)
        val, _ = _si.quad(f, lo, np.inf, **_QUAD_OPTS)
        return val

    a_t2 = spec.alpha_tilde2
    g_t2 = spec.gamma_tilde2
    tm, tn = cov.t_u[m], cov.t_u[n]
    c = spec.gamma - spec.alpha

    def inner(tau):
        def g(tau2):
            return np.exp(c * (tau + tau2)
                          - spec.lam * np.abs((tau - tau2) - r))
        kink = tau - r
        pts = _breaks(0.0, tn, kink)
        val, _ = _si.quad(g, 0.0, tn, points=pts or None, **_QUAD_OPTS)
        return val

    outer, _ = _si.quad(inner, 0.0, tm, limit=200,
                        epsabs=1e-11, epsrel=1e-9)
    pref = a_t2 * g_t2 * np.exp(-spec.gamma * (tm + tn))
    return pref * outer
