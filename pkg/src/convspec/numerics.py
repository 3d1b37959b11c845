"""Special functions and guarded positive-definite linear algebra.

Everything here is pure and reentrant.  ``bvn_cdf`` follows the classic
Drezner-Wesolowsky/Genz reduction of the correlation integral (the
derivative of the CDF in the correlation is the bivariate density, so the
CDF is recovered by a 1-D quadrature starting from the independent case),
with Gauss-Legendre nodes and a separate treatment of the high-correlation
regime.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special as _sp

__all__ = [
    "PositiveDefiniteError",
    "PsdMatrix",
    "erf",
    "std_normal_cdf",
    "bvn_cdf",
    "bvn_cdf_grad",
    "robust_cholesky",
]

# Jitter escalation: 1e-12 * tr(M)/dim * 10**k for k = 0..6.
_JITTER_BASE = 1e-12
_JITTER_STEPS = 7

_GL_NODES, _GL_WEIGHTS = leggauss(20)


class PositiveDefiniteError(np.linalg.LinAlgError):
    """Matrix could not be factorized even after jitter escalation."""


def _maybe_scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def erf(x):
    """Error function, exactly odd by construction and vectorized."""
    x = np.asarray(x, dtype=float)
    out = np.copysign(_sp.erf(np.abs(x)), x)
    return _maybe_scalar(out)


def std_normal_cdf(x):
    """Standard normal CDF."""
    return _maybe_scalar(_sp.ndtr(np.asarray(x, dtype=float)))


def _bvn_upper(dh, dk, r):
    """P(X > dh, Y > dk) for standard bivariate normal with correlation r.

    Vectorized over all arguments; requires |r| < 1 and finite dh, dk.
    """
    h = np.asarray(dh, dtype=float)
    k = np.asarray(dk, dtype=float)
    r = np.asarray(r, dtype=float)
    h, k, r = np.broadcast_arrays(h, k, r)
    h = h.copy()
    k = k.copy()
    hk = h * k

    small = np.abs(r) < 0.925
    twopi = 2.0 * np.pi

    with np.errstate(divide="ignore", invalid="ignore", under="ignore",
                     over="ignore"):
        # Angular form for moderate correlation.
        hs = 0.5 * (h * h + k * k)
        asr = np.arcsin(np.where(small, r, 0.0))
        acc = np.zeros_like(r)
        for xi, wi in zip(_GL_NODES, _GL_WEIGHTS):
            sn = np.sin(asr * (xi + 1.0) / 2.0)
            acc += wi * np.exp((sn * hk - hs) / (1.0 - sn * sn))
        bvn_small = acc * asr / (2.0 * twopi)
        bvn_small += _sp.ndtr(-h) * _sp.ndtr(-k)

        # Tail form for high correlation.
        neg = r < 0.0
        k2 = np.where(neg, -k, k)
        hk2 = np.where(neg, -hk, hk)
        a2 = (1.0 - r) * (1.0 + r)
        a = np.sqrt(a2)
        bs = (h - k2) ** 2
        c = (4.0 - hk2) / 8.0
        d = (12.0 - hk2) / 16.0
        asr2 = -0.5 * (bs / a2 + hk2)
        big = a * np.exp(asr2) * (
            1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0
            + c * d * a2 * a2 / 5.0
        )
        big = np.where(asr2 > -100.0, big, 0.0)
        b = np.sqrt(bs)
        sp = np.sqrt(twopi) * _sp.ndtr(-b / np.where(a > 0, a, 1.0))
        corr = np.exp(-0.5 * hk2) * sp * b * (
            1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0
        )
        big = big - np.where(-hk2 < 100.0, corr, 0.0)
        ahalf = a / 2.0
        for xi, wi in zip(_GL_NODES, _GL_WEIGHTS):
            xs = (ahalf * (xi + 1.0)) ** 2
            rs = np.sqrt(np.maximum(1.0 - xs, 0.0))
            asr1 = -0.5 * (bs / np.where(xs > 0, xs, 1.0) + hk2)
            ep = np.exp(-hk2 * (1.0 - rs) / (2.0 * (1.0 + rs))) / np.where(
                rs > 0, rs, 1.0)
            sp1 = 1.0 + c * xs * (1.0 + d * xs)
            contrib = ahalf * wi * np.exp(asr1) * (ep - sp1)
            big += np.where(asr1 > -100.0, contrib, 0.0)
        big = -big / twopi
        big_pos = big + _sp.ndtr(-np.maximum(h, k2))
        big_neg = -big + np.where(k2 > h, _sp.ndtr(k2) - _sp.ndtr(h), 0.0)
        bvn_big = np.where(neg, big_neg, big_pos)

    out = np.where(small, bvn_small, bvn_big)
    return np.clip(out, 0.0, 1.0)


def bvn_cdf(h, k, rho):
    """P(X <= h, Y <= k) for the standard bivariate normal, |rho| <= 1.

    Absolute accuracy is well below 1e-10 away from |rho| = 1; the
    boundary |rho| = 1 is handled by the degenerate 1-D reduction.
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    rho = np.asarray(rho, dtype=float)
    h, k, rho = np.broadcast_arrays(h, k, rho)
    if np.any(np.abs(rho) > 1.0):
        raise ValueError("correlation must satisfy |rho| <= 1")

    out = np.empty(np.broadcast(h, k, rho).shape, dtype=float)
    out_flat = out.reshape(-1)
    hf = h.reshape(-1)
    kf = k.reshape(-1)
    rf = rho.reshape(-1)

    pos1 = rf == 1.0
    neg1 = rf == -1.0
    hinf = np.isposinf(hf)
    kinf = np.isposinf(kf)
    hninf = np.isneginf(hf)
    kninf = np.isneginf(kf)
    degenerate = pos1 | neg1 | hinf | kinf | hninf | kninf
    regular = ~degenerate

    out_flat[pos1] = _sp.ndtr(np.minimum(hf[pos1], kf[pos1]))
    out_flat[neg1] = np.maximum(
        _sp.ndtr(hf[neg1]) + _sp.ndtr(kf[neg1]) - 1.0, 0.0)
    out_flat[hinf] = _sp.ndtr(kf[hinf])
    out_flat[kinf & ~hinf] = _sp.ndtr(hf[kinf & ~hinf])
    out_flat[hninf | kninf] = 0.0
    # Infinities override the rho = +-1 fill where both apply.
    out_flat[hinf & kinf] = 1.0

    if np.any(regular):
        out_flat[regular] = _bvn_upper(
            -hf[regular], -kf[regular], rf[regular])
    return _maybe_scalar(out)


def bvn_cdf_grad(h, k, rho):
    """Partial derivatives of ``bvn_cdf`` in (h, k, rho).

    The rho-derivative is the bivariate normal density at (h, k).
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) >= 1.0):
        raise ValueError("gradients require |rho| < 1")
    s = np.sqrt(1.0 - rho * rho)
    dh = np.exp(-0.5 * h * h) / np.sqrt(2.0 * np.pi) * _sp.ndtr(
        (k - rho * h) / s)
    dk = np.exp(-0.5 * k * k) / np.sqrt(2.0 * np.pi) * _sp.ndtr(
        (h - rho * k) / s)
    drho = np.exp(-(h * h - 2.0 * rho * h * k + k * k) / (2.0 * s * s)) / (
        2.0 * np.pi * s)
    return _maybe_scalar(dh), _maybe_scalar(dk), _maybe_scalar(drho)


class PsdMatrix:
    """A symmetric PSD matrix with its lower Cholesky factor.

    ``factor @ factor.T`` reconstructs ``entries + jitter_applied * I``.
    """

    __slots__ = ("entries", "factor", "jitter_applied")

    def __init__(self, entries, factor, jitter_applied):
        self.entries = entries
        self.factor = factor
        self.jitter_applied = float(jitter_applied)

    @property
    def dim(self):
        return self.entries.shape[0]

    def solve(self, b):
        """Solve (entries + jitter I) x = b via the factor."""
        from scipy.linalg import cho_solve

        return cho_solve((self.factor, True), np.asarray(b, dtype=float))

    def inv(self):
        return self.solve(np.eye(self.dim))

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))

    def half_solve(self, b):
        """Solve factor x = b (lower triangular)."""
        from scipy.linalg import solve_triangular

        return solve_triangular(self.factor, np.asarray(b, dtype=float),
                                lower=True)

    def matmul(self, b):
        return self.entries @ b


def robust_cholesky(mat):
    """Factor a symmetric matrix, escalating diagonal jitter on failure.

    The jitter schedule is ``1e-12 * tr(M)/dim * 10**k`` for ``k = 0..6``;
    the applied jitter is recorded on the returned :class:`PsdMatrix`.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    scale = np.max(np.abs(mat)) if mat.size else 0.0
    asym = np.max(np.abs(mat - mat.T)) if mat.size else 0.0
    if scale > 0 and asym > 1e-8 * scale:
        raise ValueError(
            f"matrix is not symmetric within tolerance (asymmetry {asym:.3e} "
            f"vs scale {scale:.3e})")
    sym = 0.5 * (mat + mat.T)

    if not np.any(sym):
        # The zero matrix is PSD with a zero factor.
        return PsdMatrix(sym, np.zeros_like(sym), 0.0)

    dim = sym.shape[0]
    base = _JITTER_BASE * np.trace(sym) / dim
    try:
        return PsdMatrix(sym, np.linalg.cholesky(sym), 0.0)
    except np.linalg.LinAlgError:
        pass
    if base > 0:
        for k in range(_JITTER_STEPS):
            jitter = base * 10.0 ** k
            try:
                factor = np.linalg.cholesky(sym + jitter * np.eye(dim))
                return PsdMatrix(sym, factor, jitter)
            except np.linalg.LinAlgError:
                continue
    raise PositiveDefiniteError(
        f"matrix of dim {dim} not positive definite after jitter escalation "
        f"(base jitter {base:.3e})")
