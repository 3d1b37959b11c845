"""Posterior predictions for the function, the kernel, and the PSD,
plus evaluation metrics.

Function prediction uses the closed-form conditional moments mixed over
posterior draws (or over the factorized Gaussian).  Kernel and PSD
predictions are Monte Carlo over filter draws so that full marginal
quantile bands are available; the closed-form cross-time integrals serve
as an independent check of the same quantity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .inference import GaussianQ, GibbsChain
from .integrals import (
    compute_I_hx,
    compute_I_hx_cross,
    compute_I_hz,
    compute_I_ux,
    compute_I_ux_cross,
    compute_I_uz,
)
from .model import deq_kernel, kernel_from_filter
from .numerics import robust_cholesky

__all__ = [
    "Prediction",
    "QUANTILE_LEVELS",
    "predict_function",
    "predict_kernel",
    "predict_psd",
    "posterior_kernel_mean",
    "metrics",
]

QUANTILE_LEVELS = (1, 5, 10, 25, 50, 75, 90, 95, 99)


@dataclass
class Prediction:
    """Pointwise summary of a predictive distribution."""

    inputs: np.ndarray
    mean: np.ndarray
    variance: np.ndarray | None = None
    quantiles: np.ndarray | None = None      # (len(levels), n_points)
    quantile_levels: tuple = QUANTILE_LEVELS
    n_mc: int = 0
    seed: int | None = None
    extrapolation_warning: bool = False
    extras: dict = field(default_factory=dict)


def _posterior_draws(posterior, n_mc, rng):
    """Hat-space (u, z) draws from either posterior representation."""
    if isinstance(posterior, GibbsChain):
        m = posterior.n_samples
        if n_mc >= m:
            idx = np.arange(m)
        else:
            idx = np.linspace(0, m - 1, n_mc).astype(int)
        return posterior.u_samples[idx], posterior.z_samples[idx]
    q_u, q_z = posterior
    return q_u.sample(rng, n_mc), q_z.sample(rng, n_mc)


def predict_function(spec, cov, posterior, t_star, *, include_noise=False,
                     n_mc=256, seed=0):
    """Predictive mean and variance of the latent (or noisy) function.

    For a Gibbs posterior the conditional moments are mixture-averaged
    over the stored draws; for a factorized Gaussian posterior they are
    available in closed form.
    """
    t_star = np.asarray(t_star, dtype=float)
    a, b = spec.interval
    warn = bool(t_star.size) and bool(
        np.any((t_star < a - 2 * spec.tau_w) | (t_star > b + 2 * spec.tau_w)))

    I = compute_I_uz(spec, cov, t_star)            # (n*, n_u, n_z)
    I_hz = compute_I_hz(spec, cov, t_star)         # (n*, n_z, n_z)
    I_ux = compute_I_ux(spec, cov)                 # (n_u, n_u)
    I_hx = compute_I_hx(spec)
    Ku_inv = cov.K_u.inv()
    Kz_inv = cov.K_z.inv()
    A = I_ux[None] - np.einsum("nua,ab,nvb->nuv", I, Kz_inv, I)
    B = I_hz - np.einsum("nua,uv,nvb->nab", I, Ku_inv, I)
    c = (I_hx - float(np.sum(Ku_inv * I_ux))
         - np.einsum("ab,nab->n", Kz_inv, I_hz)
         + np.einsum("uv,nua,ab,nvb->n", Ku_inv, I, Kz_inv, I))

    if isinstance(posterior, GibbsChain):
        us, zs = _posterior_draws(posterior, n_mc, None)
        f_mean_d = np.einsum("du,nuz,dz->dn", us, I, zs)
        second_d = (np.einsum("du,nuv,dv->dn", us, A, us)
                    + np.einsum("da,nab,db->dn", zs, B, zs)
                    + f_mean_d**2 + c[None, :])
        mean = f_mean_d.mean(axis=0)
        second = second_d.mean(axis=0)
        n_used = us.shape[0]
    else:
        q_u, q_z = posterior
        su = q_u.second_moment()
        sz = q_z.second_moment()
        mean = np.einsum("u,nuz,z->n", q_u.mean, I, q_z.mean)
        second = (np.einsum("uv,nuv->n", su, A)
                  + np.einsum("ab,nab->n", sz, B)
                  + np.einsum("nua,uv,nvb,ab->n", I, su, I, sz)
                  + c)
        n_used = 0
    variance = np.maximum(second - mean**2, 0.0)
    if include_noise:
        variance = variance + spec.sigma2
    if warn:
        warnings.warn("prediction times extend far outside the data "
                      "window", RuntimeWarning)
    return Prediction(inputs=t_star, mean=mean, variance=variance,
                      n_mc=n_used, seed=seed, extrapolation_warning=warn)


def _filter_draw_setup(spec, cov, grid_step):
    """Grid and conditional factorization for filter draws given u."""
    if spec.variant == "rgpcm":
        s = np.arange(0.0, 8.0 * spec.tau_w + grid_step / 2, grid_step)
        prior_cov = np.eye(s.size) / grid_step
    elif spec.variant == "cgpcm":
        m = int(np.ceil(4.0 * spec.tau_w / grid_step))
        s = grid_step * np.arange(0, m + 1)
        prior_cov = deq_kernel(spec, s[:, None], s[None, :])
    else:
        m = int(np.ceil(4.0 * spec.tau_w / grid_step))
        s = grid_step * np.arange(-m, m + 1)
        prior_cov = deq_kernel(spec, s[:, None], s[None, :])
    k_u_grid = cov.k_u(s)                          # (n_s, n_u)
    cond_cov = prior_cov - k_u_grid @ cov.K_u.solve(k_u_grid.T)
    factor = robust_cholesky(cond_cov).factor
    return s, k_u_grid, factor


def _filter_draws(spec, cov, us, grid_step, rng):
    """Sample filters conditional on hat-space feature draws."""
    s, k_u_grid, factor = _filter_draw_setup(spec, cov, grid_step)
    means = us @ k_u_grid.T                        # (d, n_s)
    noise = rng.standard_normal((us.shape[0], s.size)) @ factor.T
    draws = means + noise
    if spec.variant == "rgpcm":
        draws = draws * np.sqrt(spec.alpha_tilde2) \
            * np.exp(-spec.alpha * np.abs(s))
    return s, draws


def predict_kernel(spec, cov, posterior, lags, n_mc=200, seed=0, *,
                   grid_step=None):
    """Monte-Carlo posterior over the signal kernel at the given lags."""
    lags = np.asarray(lags, dtype=float)
    if np.any(lags < 0):
        raise ValueError("lags must be nonnegative")
    if grid_step is None:
        grid_step = spec.tau_f / 15.0
    if grid_step > spec.tau_f / 10.0:
        raise ValueError("grid step too coarse for the signal scale")

    rng = np.random.default_rng(seed)
    us, _ = _posterior_draws(posterior, n_mc, rng)
    s, draws = _filter_draws(spec, cov, us, grid_step, rng)

    if spec.variant == "rgpcm":
        samples = np.stack([
            kernel_from_filter(h, grid_step, lags, causal=True,
                               kx_rate=spec.lam) for h in draws])
    else:
        max_lag = float(lags.max()) if lags.size else 0.0
        grid_lags = grid_step * np.arange(int(np.ceil(max_lag / grid_step))
                                          + 2)
        causal = spec.variant == "cgpcm"
        ks = np.stack([
            kernel_from_filter(h, grid_step, grid_lags, causal=causal)
            for h in draws])
        samples = np.stack([np.interp(lags, grid_lags, k) for k in ks])

    mean = samples.mean(axis=0)
    variance = samples.var(axis=0, ddof=1) if samples.shape[0] > 1 else \
        np.zeros_like(mean)
    quant = np.percentile(samples, QUANTILE_LEVELS, axis=0)
    return Prediction(inputs=lags, mean=mean, variance=variance,
                      quantiles=quant, n_mc=us.shape[0], seed=seed)


def posterior_kernel_mean(spec, cov, u_hat, lags):
    """Closed-form E[kernel(r) | u] from the cross-time integrals.

    Independent of the Monte-Carlo path; used as a cross-check.
    """
    Ku_inv = cov.K_u.inv()
    out = np.empty(len(lags))
    for i, r in enumerate(np.asarray(lags, dtype=float)):
        I_cr = compute_I_ux_cross(spec, cov, r)
        out[i] = (compute_I_hx_cross(spec, r)
                  - float(np.sum(Ku_inv * I_cr))
                  + float(u_hat @ I_cr @ u_hat))
    return out


def _psd_from_kernel(k_vals, spacing, freqs):
    """Cosine transform of a symmetrized, tapered kernel sample.

    Angular-frequency convention: psd(w) = (1/2pi) int k(r) e^{-iwr} dr.
    Small negative excursions from truncation are clipped to zero.
    """
    n = k_vals.shape[-1]
    taper = np.ones(n)
    ramp_start = int(np.floor(0.9 * (n - 1)))
    width = max(n - 1 - ramp_start, 1)
    ramp = 0.5 * (1.0 + np.cos(np.pi * np.arange(width + 1) / width))
    taper[ramp_start:] = ramp[: n - ramp_start]
    kt = k_vals * taper
    r = spacing * np.arange(n)
    basis = np.cos(np.outer(freqs, r))             # (n_f, n)
    weights = np.full(n, spacing)
    vals = (basis * kt[..., None, :] * weights).sum(axis=-1)
    vals = (2.0 * vals - spacing * kt[..., :1]) / (2.0 * np.pi)
    return np.maximum(vals, 0.0)


def predict_psd(spec, cov, posterior, freqs, n_mc=200, seed=0, *,
                grid_step=None, max_lag=None):
    """Monte-Carlo posterior over the power spectral density.

    For the rough variant the prediction also exposes the spectral
    decomposition into the squared filter response and the excitation
    spectrum (``extras['filter_gain']`` and ``extras['excitation_psd']``).
    """
    freqs = np.asarray(freqs, dtype=float)
    if np.any(freqs < 0):
        raise ValueError("frequencies must be nonnegative")
    if grid_step is None:
        grid_step = spec.tau_f / 15.0
    if grid_step > spec.tau_f / 10.0:
        raise ValueError("grid step too coarse for the signal scale")
    nyquist = np.pi / grid_step
    if np.any(freqs > nyquist):
        raise ValueError(f"frequencies beyond the grid Nyquist {nyquist:.3g}")
    if max_lag is None:
        max_lag = 6.0 * spec.tau_w

    rng = np.random.default_rng(seed)
    us, _ = _posterior_draws(posterior, n_mc, rng)
    s, draws = _filter_draws(spec, cov, us, grid_step, rng)
    lags = grid_step * np.arange(int(np.ceil(max_lag / grid_step)) + 1)
    if spec.variant == "rgpcm":
        k_samples = np.stack([
            kernel_from_filter(h, grid_step, lags, causal=True,
                               kx_rate=spec.lam) for h in draws])
    else:
        causal = spec.variant == "cgpcm"
        k_samples = np.stack([
            kernel_from_filter(h, grid_step, lags, causal=causal)
            for h in draws])

    psd_samples = _psd_from_kernel(k_samples, grid_step, freqs)
    mean = psd_samples.mean(axis=0)
    variance = psd_samples.var(axis=0, ddof=1) if psd_samples.shape[0] > 1 \
        else np.zeros_like(mean)
    quant = np.percentile(psd_samples, QUANTILE_LEVELS, axis=0)
    extras = {}
    if spec.variant == "rgpcm":
        # |F h|^2 from the sampled filter, F k_x in closed form.
        phases = np.exp(-1j * np.outer(freqs, s))
        fh = grid_step * draws @ phases.T          # (d, n_f)
        gain = np.abs(fh) ** 2
        excitation = spec.lam / (np.pi * (spec.lam**2 + freqs**2))
        extras["filter_gain"] = gain.mean(axis=0)
        extras["excitation_psd"] = excitation
        extras["decomposed_psd"] = gain.mean(axis=0) * excitation
    return Prediction(inputs=freqs, mean=mean, variance=variance,
                      quantiles=quant, n_mc=us.shape[0], seed=seed,
                      extras=extras)


def metrics(pred_mean, pred_var, truth):
    """Mean log loss and RMSE of a Gaussian pointwise prediction."""
    pred_mean = np.asarray(pred_mean, dtype=float)
    pred_var = np.asarray(pred_var, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred_mean.shape != truth.shape or pred_var.shape != truth.shape:
        raise ValueError("shape mismatch between predictions and truth")
    if np.any(pred_var <= 0):
        raise ValueError("predictive variances must be strictly positive")
    mll = float(np.mean(0.5 * np.log(2.0 * np.pi * pred_var)
                        + 0.5 * (truth - pred_mean) ** 2 / pred_var))
    rmse = float(np.sqrt(np.mean((truth - pred_mean) ** 2)))
    return mll, rmse
