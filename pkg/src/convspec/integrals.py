"""Closed-form feature integrals for all model variants.

The conditional moments of the convolved process reduce to four integral
families against the filter/excitation kernels and their feature
cross-covariances:

* ``I_hx(t)``  - double integral of the filter kernel against the
  excitation kernel (a scalar, time-invariant for all variants);
* ``I_hz(t)``  - filter kernel against excitation-feature outer products;
* ``I_ux(t)``  - filter-feature outer products against the excitation
  kernel (time-invariant);
* ``I_uz(t)``  - cross term between filter and excitation features.

Smooth variants are handled by the exponentiated-quadratic algebra in
:mod:`convspec.exppoly` (the causal variant introduces erf and bivariate
normal CDF factors through its finite integration limits).  The rough
variant uses hand-derived piecewise forms for its harmonic features.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exppoly import ExpQuadSum, const, var
from .model import deq_kernel  # noqa: F401  (re-exported for oracles)

__all__ = [
    "IntegralSet",
    "compute_I_hx",
    "compute_I_hx_cross",
    "compute_I_hz",
    "compute_I_ux",
    "compute_I_ux_cross",
    "compute_I_uz",
    "compute_integral_set",
]


@dataclass
class IntegralSet:
    """Batched integrals at the data times."""

    I_hx: float
    I_hz: np.ndarray  # (n, n_z, n_z)
    I_ux: np.ndarray  # (n_u, n_u)
    I_uz: np.ndarray  # (n, n_u, n_z)


# ---------------------------------------------------------------------------
# Exponentiated-quadratic integrands for the smooth variants.

def _deq_expr(spec, t1, t2):
    """Filter kernel alpha_t^2 exp(-a t1^2 - a t2^2 - g (t1-t2)^2)."""
    expo = -(const(spec.alpha) * t1**2 + const(spec.alpha) * t2**2
             + const(spec.gamma) * (t1 - t2) ** 2)
    return spec.alpha_tilde2 * ExpQuadSum(expo)


def _smoother_expr(spec, t1, t2):
    """Excitation-feature smoother omega_t exp(-w (t1-t2)^2)."""
    return np.sqrt(spec.omega_tilde2) * ExpQuadSum(
        -(const(spec.omega) * (t1 - t2) ** 2))


def _conv_limits(spec):
    upper = var("t") if spec.variant == "cgpcm" else np.inf
    return -np.inf, upper


def compute_I_hx(spec):
    """Scalar integral of the filter kernel against the excitation kernel."""
    if spec.variant == "gpcm":
        return float(spec.alpha_tilde2 * np.sqrt(np.pi / (2.0 * spec.alpha)))
    if spec.variant == "cgpcm":
        return float(0.5 * spec.alpha_tilde2
                     * np.sqrt(np.pi / (2.0 * spec.alpha)))
    return float(spec.alpha_tilde2 / (2.0 * spec.alpha))


def compute_I_hx_cross(spec, r):
    """Cross-time analogue of ``compute_I_hx`` at lag r = t - t'."""
    r = np.asarray(r, dtype=float)
    if spec.variant == "rgpcm":
        out = compute_I_hx(spec) * np.exp(-spec.lam * np.abs(r))
        return float(out) if out.ndim == 0 else out
    sig = var("sigma")
    expr = _deq_expr(spec, sig, sig - var("r"))
    if spec.variant == "gpcm":
        out = expr.integrate_box(("sigma", -np.inf, np.inf), r=np.abs(r))
    else:
        out = expr.integrate_box(("sigma", var("r"), np.inf), r=np.abs(r))
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def compute_I_uz(spec, cov, t):
    """Cross integral between filter and excitation features at times t."""
    t = np.asarray(t, dtype=float)
    if spec.variant in ("gpcm", "cgpcm"):
        expr = _deq_expr(spec, var("t") - var("tau"), var("t_u")) \
            * _smoother_expr(spec, var("tau"), var("t_z"))
        lo, hi = _conv_limits(spec)
        return expr.integrate_box(
            ("tau", lo, hi),
            t=t[..., None, None],
            t_u=cov.t_u[:, None],
            t_z=cov.t_z[None, :])
    return _rgpcm_I_uz(spec, cov, t)


def compute_I_hz(spec, cov, t):
    """Excitation-feature integral of the filter kernel at times t."""
    t = np.asarray(t, dtype=float)
    if spec.variant in ("gpcm", "cgpcm"):
        expr = _deq_expr(spec, var("t") - var("tau1"), var("t") - var("tau2")) \
            * _smoother_expr(spec, var("tau1"), var("t_z_1")) \
            * _smoother_expr(spec, var("t_z_2"), var("tau2"))
        lo, hi = _conv_limits(spec)
        out = expr.integrate_box(
            ("tau1", lo, hi), ("tau2", lo, hi),
            t=t[..., None, None],
            t_z_1=cov.t_z[:, None],
            t_z_2=cov.t_z[None, :])
    else:
        out = _rgpcm_I_hz(spec, cov, t)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def compute_I_ux(spec, cov, t=None):
    """Filter-feature integral against the excitation kernel (t-invariant)."""
    out = compute_I_ux_cross(spec, cov, 0.0)
    if t is not None:
        t = np.asarray(t, dtype=float)
        out = np.broadcast_to(out, t.shape + out.shape)
    return out


def compute_I_ux_cross(spec, cov, r):
    """Cross-time filter-feature integral at scalar lag r = t - t'."""
    r = float(r)
    if r < 0:
        return compute_I_ux_cross(spec, cov, -r).T
    if spec.variant in ("gpcm", "cgpcm"):
        sig = var("sigma")
        expr = _deq_expr(spec, sig, var("t_u_1")) \
            * _deq_expr(spec, sig - var("r"), var("t_u_2"))
        lo = var("r") if spec.variant == "cgpcm" else -np.inf
        out = expr.integrate_box(
            ("sigma", lo, np.inf),
            r=np.asarray(r),
            t_u_1=cov.t_u[:, None],
            t_u_2=cov.t_u[None, :])
    else:
        out = _rgpcm_I_ux_cross(spec, cov, r)
    if r == 0.0:
        out = 0.5 * (out + out.T)
    return out


def compute_integral_set(spec, cov, times):
    """All four families evaluated in one batched pass over the times."""
    times = np.asarray(times, dtype=float)
    return IntegralSet(
        I_hx=compute_I_hx(spec),
        I_hz=compute_I_hz(spec, cov, times),
        I_ux=compute_I_ux(spec, cov),
        I_uz=compute_I_uz(spec, cov, times),
    )


# ---------------------------------------------------------------------------
# Rough-variant closed forms.

def _phi1(x):
    """expm1(x)/x with the x -> 0 limit."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-12
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + 0.5 * x, np.expm1(safe) / safe)


def _guarded_lam(spec):
    """Perturb the excitation rate away from the removable singularity
    |gamma - alpha| = lam of the double-exponential box integral."""
    lam = spec.lam
    if abs(abs(spec.gamma - spec.alpha) - lam) < 1e-9 * lam:
        warnings.warn(
            "excitation rate perturbed by 1e-8 to avoid the degenerate "
            "|gamma - alpha| = lam configuration", RuntimeWarning)
        lam = lam * (1.0 + 1e-8)
    return lam


def _double_exp_box(alim, blim, c, d):
    """Box integral of exp(c(u + v) - d|u - v|) over [0,a] x [0,b].

    Valid for all real a, b (negative bounds orient the box) provided
    c**2 != d**2.
    """
    a = np.asarray(alim, dtype=float)
    b = np.asarray(blim, dtype=float)
    sa = np.sign(a)
    s = np.minimum(np.abs(a), np.abs(b))
    ridge = np.where(a * b >= 0,
                     -2.0 * d * s * sa**2 * _phi1(2.0 * c * sa * s),
                     0.0)
    rest = (1.0
            - np.exp(c * a - d * np.abs(a))
            - np.exp(c * b - d * np.abs(b))
            + np.exp(c * (a + b) - d * np.abs(a - b)))
    return (ridge + rest) / (c * c - d * d)


def _rgpcm_I_ux_cross(spec, cov, r):
    lam = _guarded_lam(spec)
    c = spec.gamma - spec.alpha
    tm = cov.t_u[:, None]
    tn = cov.t_u[None, :]
    pref = spec.alpha_tilde2 * spec.gamma_tilde2 * np.exp(
        -spec.gamma * (tm + tn))
    if r == 0.0:
        box = _double_exp_box(tm, tn, c, lam)
        return pref * box
    box = _double_exp_box(tm - r, tn, c, lam) - _double_exp_box(-r, tn, c, lam)
    return pref * np.exp(c * r) * box


def _rgpcm_I_uz(spec, cov, t):
    """Piecewise closed form of the filter/excitation cross integral.

    Everything is expressed through segments of
    ``int exp(c (tau - t)) * feature(tau) dtau`` so that no intermediate
    exponential exceeds the magnitude of the final result by more than
    exp(gamma * tau_w).
    """
    a, b = spec.interval
    lam = spec.lam
    c = spec.alpha - spec.gamma
    t = np.asarray(t, dtype=float)
    tt = t[..., None]                            # (..., 1)
    lo_all = tt - cov.t_u                        # (..., n_u)
    hi_all = np.broadcast_to(tt, lo_all.shape)

    M = (spec.n_z - 1) // 2
    freqs = cov.vff_freqs

    def shifted_exp(x):
        return np.exp(c * (x - tt))

    def seg_plain(lo, hi, rate):
        # int_lo^hi exp(c (tau - t)) * exp(rate * tau') style pieces are
        # folded by the caller; here rate shifts the effective slope.
        width = np.maximum(hi - lo, 0.0)
        return shifted_exp(lo) * width * _phi1((c + rate) * width)

    out = np.zeros(t.shape + (spec.n_u, spec.n_z))

    # Segment bounds clipped to the three feature regimes.
    lo_left, hi_left = lo_all, np.minimum(hi_all, a)
    lo_mid = np.maximum(lo_all, a)
    hi_mid = np.minimum(hi_all, b)
    lo_right = np.maximum(lo_all, b)
    hi_right = hi_all

    # Left tail: constant/cosine features decay as exp(-lam (a - tau)).
    left = np.exp(-lam * np.maximum(a - lo_left, 0.0)) \
        * seg_plain(lo_left, hi_left, lam)
    # Right tail: decay exp(-lam (tau - b)).
    right = np.exp(-lam * np.maximum(lo_right - b, 0.0)) \
        * seg_plain(lo_right, hi_right, -lam)

    out[..., 0] = left + seg_plain(lo_mid, hi_mid, 0.0) + right

    denom_base = c * c
    width_ok = hi_mid > lo_mid
    lo_m = np.where(width_ok, lo_mid, np.minimum(hi_mid, lo_mid))
    hi_m = np.where(width_ok, hi_mid, lo_m)
    for j in range(1, M + 1):
        w = freqs[j - 1]
        denom = denom_base + w * w
        th_lo = w * (lo_m - a)
        th_hi = w * (hi_m - a)
        e_lo = shifted_exp(lo_m)
        e_hi = shifted_exp(hi_m)
        cos_part = (e_hi * (c * np.cos(th_hi) + w * np.sin(th_hi))
                    - e_lo * (c * np.cos(th_lo) + w * np.sin(th_lo))) / denom
        sin_part = (e_hi * (c * np.sin(th_hi) - w * np.cos(th_hi))
                    - e_lo * (c * np.sin(th_lo) - w * np.cos(th_lo))) / denom
        out[..., j] = left + right + cos_part
        out[..., M + j] = sin_part

    pref = np.sqrt(spec.alpha_tilde2 * spec.gamma_tilde2) * np.exp(
        -spec.gamma * cov.t_u)
    return out * pref[:, None]


def _rgpcm_I_hz(spec, cov, t):
    """Delta-collapsed excitation-feature integrals of the rough filter."""
    a, b = spec.interval
    al = spec.alpha
    lam = spec.lam
    t = np.asarray(t, dtype=float)
    M = (spec.n_z - 1) // 2
    span = b - a
    n_z = spec.n_z

    d_u = np.maximum(t - np.clip(t, a, b), 0.0)    # t - min(t, b), >= 0
    d_a = np.maximum(t - a, 0.0)
    uu = np.clip(t, a, b)
    e_u = np.exp(-2.0 * al * d_u)
    e_a = np.exp(-2.0 * al * d_a)

    # Cosine and sine interior primitives for harmonics j = 0..2M.
    js = np.arange(2 * M + 1)
    w = 2.0 * np.pi * js / span                    # (2M+1,)
    th = w * (uu[..., None] - a)
    denom = 4.0 * al * al + w * w
    Ccos = (e_u[..., None] * (2.0 * al * np.cos(th) + w * np.sin(th))
            - 2.0 * al * e_a[..., None]) / denom
    Csin = (e_u[..., None] * (2.0 * al * np.sin(th) - w * np.cos(th))
            + w * e_a[..., None]) / denom

    # Tails shared by all constant/cosine pairs.
    left = np.exp(-2.0 * al * d_a - 2.0 * lam * np.maximum(a - t, 0.0)) \
        / (2.0 * (al + lam))
    s_b = np.maximum(t - b, 0.0)
    right = np.exp(-2.0 * al * s_b) * s_b * _phi1(2.0 * (al - lam) * s_b)

    # Feature bookkeeping: 0 = constant, 1..M cosine, M+1..2M sine.
    p = np.concatenate([[0], np.arange(1, M + 1), np.arange(1, M + 1)])
    is_sin = np.zeros(n_z, dtype=bool)
    is_sin[M + 1:] = True

    sum_idx = p[:, None] + p[None, :]
    diff_idx = np.abs(p[:, None] - p[None, :])
    both_cos = ~is_sin[:, None] & ~is_sin[None, :]
    both_sin = is_sin[:, None] & is_sin[None, :]
    mixed = ~(both_cos | both_sin)
    p_sin = np.where(is_sin[:, None], p[:, None], p[None, :])
    p_cos = np.where(is_sin[:, None], p[None, :], p[:, None])
    mix_sum = p_sin + p_cos
    mix_diff = p_sin - p_cos

    tails = (left + right)[..., None, None]
    Cd = Ccos[..., diff_idx]
    Cs = Ccos[..., sum_idx]
    Sm = Csin[..., mix_sum]
    Sd = np.sign(mix_diff) * Csin[..., np.abs(mix_diff)]

    out = np.where(both_cos, 0.5 * (Cd + Cs) + tails,
                   np.where(both_sin, 0.5 * (Cd - Cs),
                            0.5 * (Sm + Sd)))
    return spec.alpha_tilde2 * out
