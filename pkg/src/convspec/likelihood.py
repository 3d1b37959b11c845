"""Dataset sufficient statistics and the conditionally quadratic expected
log-likelihood.

Everything is expressed in hat-space (features premultiplied by the
inverse Gram): with ``u_hat = K_u^{-1} u`` and ``z_hat = K_z^{-1} z`` the
conditional expectation of the Gaussian log-likelihood is a quadratic in
``u_hat`` for fixed ``z_hat`` and vice versa, with per-time aggregates

    A(t) = I_ux(t) - I_uz(t) K_z^{-1} I_uz(t)^T
    B(t) = I_hz(t) - I_uz(t)^T K_u^{-1} I_uz(t)
    c(t) = I_hx - <K_u^{-1}, I_ux> - <K_z^{-1}, I_hz(t)>
           + <K_u^{-1}, I_uz(t) K_z^{-1} I_uz(t)^T>.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .integrals import compute_integral_set
from .model import CovBlocks

__all__ = ["DataSet", "SuffStats", "compute_stats", "expected_loglik"]


@dataclass(frozen=True)
class DataSet:
    """Observation times (strictly increasing) and values."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)
        if t.ndim != 1 or y.ndim != 1 or t.shape != y.shape:
            raise ValueError("times and values must be 1-D and equal length")
        if t.size and not np.all(np.isfinite(t) & np.isfinite(y)):
            raise ValueError("times and values must be finite")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")

    @property
    def n(self):
        return self.times.size


@dataclass
class SuffStats:
    """Per-dataset aggregates of the feature integrals."""

    n: int
    y: np.ndarray
    y_norm2: float
    sum_A: np.ndarray          # (n_u, n_u)
    B_list: np.ndarray         # (n, n_z, n_z)
    sum_B: np.ndarray          # (n_z, n_z)
    sum_c: float
    I_list: np.ndarray         # (n, n_u, n_z)
    sum_yI: np.ndarray         # (n_u, n_z)
    cov: CovBlocks
    sigma2: float
    I_hx: float = field(default=0.0)

    @property
    def n_u(self):
        return self.cov.n_u

    @property
    def n_z(self):
        return self.cov.n_z


def compute_stats(spec, cov, data):
    """Aggregate the integral families over the dataset times."""
    n = data.n
    n_u, n_z = cov.n_u, cov.n_z
    y = data.values

    if n == 0:
        return SuffStats(
            n=0, y=y, y_norm2=0.0,
            sum_A=np.zeros((n_u, n_u)),
            B_list=np.zeros((0, n_z, n_z)),
            sum_B=np.zeros((n_z, n_z)),
            sum_c=0.0,
            I_list=np.zeros((0, n_u, n_z)),
            sum_yI=np.zeros((n_u, n_z)),
            cov=cov, sigma2=spec.sigma2,
            I_hx=float(np.nan))

    ints = compute_integral_set(spec, cov, data.times)
    I_list = ints.I_uz                                # (n, n_u, n_z)
    Ku_inv = cov.K_u.inv()
    Kz_inv = cov.K_z.inv()

    # K_z^{-1} I_uz^T per time, shaped (n, n_z, n_u).
    KzInv_It = np.einsum("ab,nub->nau", Kz_inv, I_list)
    A_list = ints.I_ux[None] - np.einsum("nua,nav->nuv", I_list, KzInv_It)
    B_list = ints.I_hz - np.einsum("nua,uv,nvb->nab", I_list, Ku_inv, I_list)
    # c(t): scalars per time.
    tr_KuInv_Iux = float(np.sum(Ku_inv * ints.I_ux))
    tr_KzInv_Ihz = np.einsum("ab,nab->n", Kz_inv, ints.I_hz)
    # <K_u^{-1}, I K_z^{-1} I^T> per time.
    tr_cross = np.einsum("uv,nua,nav->n", Ku_inv, I_list, KzInv_It)
    c_list = ints.I_hx - tr_KuInv_Iux - tr_KzInv_Ihz + tr_cross

    B_list = 0.5 * (B_list + np.swapaxes(B_list, 1, 2))
    A_list = 0.5 * (A_list + np.swapaxes(A_list, 1, 2))

    return SuffStats(
        n=n, y=y, y_norm2=float(y @ y),
        sum_A=A_list.sum(axis=0),
        B_list=B_list,
        sum_B=B_list.sum(axis=0),
        sum_c=float(c_list.sum()),
        I_list=I_list,
        sum_yI=np.einsum("n,nuz->uz", y, I_list),
        cov=cov, sigma2=spec.sigma2,
        I_hx=ints.I_hx)


def expected_loglik(stats, u_hat, z_hat):
    """Conditional expectation of the data log-likelihood given features.

    Quadratic in ``u_hat`` for fixed ``z_hat`` and vice versa; batched
    over leading dimensions of the hat-space vectors.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    z_hat = np.asarray(z_hat, dtype=float)
    if u_hat.shape[-1] != stats.n_u or z_hat.shape[-1] != stats.n_z:
        raise ValueError("hat-space vector shapes do not match the features")
    sigma2 = stats.sigma2
    base = -0.5 * stats.n * np.log(2.0 * np.pi * sigma2)
    quad_u = np.einsum("...u,uv,...v->...", u_hat, stats.sum_A, u_hat)
    quad_z = np.einsum("...a,ab,...b->...", z_hat, stats.sum_B, z_hat)
    if stats.n:
        v = np.einsum("nuz,...u->...nz", stats.I_list, u_hat)
        f_mean = np.einsum("...nz,...z->...n", v, z_hat)
        quad_uz = np.einsum("...n,...n->...", f_mean, f_mean)
        data_term = 2.0 * np.einsum("n,...n->...", stats.y, f_mean)
    else:
        quad_uz = 0.0
        data_term = 0.0
    total = (stats.y_norm2 + quad_u + stats.sum_c + quad_z + quad_uz
             - data_term)
    return base - total / (2.0 * sigma2)
