"""Model specifications, hyperparameter initialisation, inducing features,
and prior sampling.

Three model variants share one convolutional construction, a random
filter h applied to an excitation process x:

* ``gpcm``   - smooth filter (decaying exponentiated quadratic prior),
  white-noise excitation, acausal convolution;
* ``cgpcm``  - same filter prior, causal convolution;
* ``rgpcm``  - windowed white-noise filter, Ornstein-Uhlenbeck
  excitation, causal convolution.

The excitation side is summarised by inter-domain features: a Gaussian
smoother for the white-noise variants and harmonic RKHS projections on
the data window for the rough variant.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import _hot
from .numerics import PsdMatrix, erf, robust_cholesky

__all__ = [
    "VARIANTS",
    "ModelSpec",
    "CovBlocks",
    "PriorSample",
    "init_hyperparameters",
    "standard_kernel",
    "build_inducing",
    "vff_gram",
    "sample_prior",
    "kernel_from_filter",
]

VARIANTS = ("gpcm", "cgpcm", "rgpcm")


@dataclass(frozen=True)
class ModelSpec:
    """Variant tag plus every hyperparameter of the generative model.

    Rates and scales are strictly positive; fields irrelevant to a
    variant are ``None`` (``lam`` only for the rough variant, ``omega``
    only for the smooth variants).
    """

    variant: str
    alpha: float
    alpha_tilde2: float
    sigma2: float
    tau_f: float
    tau_w: float
    interval: tuple[float, float]
    n_u: int
    n_z: int
    gamma: float | None = None
    gamma_tilde2: float | None = None
    lam: float | None = None
    omega: float | None = None
    omega_tilde2: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        a, b = self.interval
        if not b > a:
            raise ValueError("interval must satisfy b > a")
        for name in ("alpha", "alpha_tilde2", "sigma2", "tau_f", "tau_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.n_u < 1 or self.n_z < 1:
            raise ValueError("feature counts must be >= 1")
        if self.variant in ("gpcm", "cgpcm"):
            if self.gamma is None or self.gamma <= 0:
                raise ValueError("gamma must be strictly positive")
            if self.omega is None or self.omega <= 0:
                raise ValueError("omega must be strictly positive")
            if self.omega_tilde2 is None or self.omega_tilde2 <= 0:
                raise ValueError("omega_tilde2 must be strictly positive")
            if self.lam is not None:
                raise ValueError("lam is not a smooth-variant parameter")
        else:
            if self.lam is None or self.lam <= 0:
                raise ValueError("lam must be strictly positive")
            if self.gamma is None or self.gamma <= 0:
                raise ValueError("gamma must be strictly positive")
            if self.gamma_tilde2 is None or self.gamma_tilde2 <= 0:
                raise ValueError("gamma_tilde2 must be strictly positive")
            if self.n_z % 2 != 1:
                raise ValueError("rough variant needs an odd feature count "
                                 "(constant plus cosine/sine pairs)")
            if self.omega is not None:
                raise ValueError("omega is not a rough-variant parameter")

    @property
    def causal(self):
        return self.variant in ("cgpcm", "rgpcm")

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


def init_hyperparameters(variant, tau_f, tau_w, *, interval=(0.0, 10.0),
                         n_u=30, n_z=None, sigma2=0.1):
    """Standardised initialisation from a signal scale and filter extent.

    The window decay and filter/excitation rates are fixed by requiring
    a prescribed filter extent ``tau_w`` and marginal-covariance length
    scale ``tau_f``; the filter amplitude then makes the prior power
    equal to one.  Feature amplitudes are normalised so the feature
    Grams have unit diagonal.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if tau_f <= 0 or tau_w <= 0:
        raise ValueError("tau_f and tau_w must be strictly positive")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be strictly positive")
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise ValueError("interval must satisfy b > a")

    if variant in ("gpcm", "cgpcm"):
        n_z = 40 if n_z is None else int(n_z)
        alpha = 0.25 * np.pi / tau_w**2
        gamma = 0.25 * np.pi / tau_f**2 - 0.5 * alpha
        if gamma <= 0:
            raise ValueError(
                f"window too short relative to the signal scale: gamma = "
                f"{gamma:.4g} <= 0 for tau_f={tau_f}, tau_w={tau_w}")
        alpha_tilde2 = np.sqrt(2.0 * alpha / np.pi)
        if variant == "cgpcm":
            # Causality halves the filter's reach; double the power.
            alpha_tilde2 = 2.0 * alpha_tilde2
        spacing = (b - a) / max(n_z - 1, 1)
        omega = 0.25 * np.pi / spacing**2
        omega_tilde2 = np.sqrt(2.0 * omega / np.pi)
        return ModelSpec(
            variant=variant, alpha=alpha, alpha_tilde2=alpha_tilde2,
            gamma=gamma, omega=omega, omega_tilde2=omega_tilde2,
            sigma2=float(sigma2), tau_f=float(tau_f), tau_w=float(tau_w),
            interval=(a, b), n_u=int(n_u), n_z=n_z)

    n_z = 41 if n_z is None else int(n_z)
    alpha = 1.0 / tau_w
    lam = 1.0 / tau_f
    alpha_tilde2 = 2.0 * alpha
    # Causal smoother rate tied to the feature spacing, mirroring the
    # spacing-based choice of the smooth variants' smoother width.
    spacing = tau_w / max(n_u - 1, 1)
    gamma = 1.0 / spacing
    gamma_tilde2 = 2.0 * gamma
    return ModelSpec(
        variant=variant, alpha=alpha, alpha_tilde2=alpha_tilde2,
        gamma=gamma, gamma_tilde2=gamma_tilde2, lam=lam,
        sigma2=float(sigma2), tau_f=float(tau_f), tau_w=float(tau_w),
        interval=(a, b), n_u=int(n_u), n_z=n_z)


def standard_kernel(variant, ell, r):
    """Standardised marginal covariance of each variant at lag r.

    gpcm: exp(-r^2/(2 ell^2)); cgpcm: (1 - erf(|r|/(4 ell))) times the
    gpcm value; rgpcm: exp(-|r|/ell).
    """
    if ell <= 0:
        raise ValueError("ell must be strictly positive")
    r = np.asarray(r, dtype=float)
    if variant == "gpcm":
        out = np.exp(-r**2 / (2.0 * ell**2))
    elif variant == "cgpcm":
        out = (1.0 - erf(np.abs(r) / (4.0 * ell))) * np.exp(
            -r**2 / (2.0 * ell**2))
    elif variant == "rgpcm":
        out = np.exp(-np.abs(r) / ell)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return float(out) if out.ndim == 0 else out


@dataclass
class CovBlocks:
    """Inducing layouts with factored Grams and cross-covariance evaluators.

    ``k_u(t)`` maps times to the filter-side feature cross-covariance
    (shape ``t.shape + (n_u,)``); ``k_z(t)`` likewise for the excitation
    side.  For the rough variant ``t_z`` is ``None`` and ``vff_freqs``
    holds the harmonics.
    """

    t_u: np.ndarray
    t_z: np.ndarray | None
    vff_freqs: np.ndarray | None
    K_u: PsdMatrix
    K_z: PsdMatrix
    k_u: callable
    k_z: callable

    @property
    def n_u(self):
        return self.K_u.dim

    @property
    def n_z(self):
        return self.K_z.dim


def vff_gram(lam, a, b, M):
    """Gram of the harmonic features under the Matern-1/2 RKHS inner
    product on [a, b], plus the feature evaluator.

    Features are ordered (constant, cos_1..cos_M, sin_1..sin_M) with
    harmonics 2 pi m / (b - a).  Off-window evaluation decays like the
    kernel: constant/cosine features decay exponentially, sine features
    vanish.
    """
    if not b > a:
        raise ValueError("window must satisfy b > a")
    if M < 0:
        raise ValueError("M must be >= 0")
    lam = float(lam)
    span = b - a
    freqs = 2.0 * np.pi * np.arange(1, M + 1) / span
    n = 2 * M + 1

    K = np.zeros((n, n))
    K[0, 0] = lam * span / 2.0 + 1.0
    for m in range(1, M + 1):
        K[m, m] = span * (lam**2 + freqs[m - 1] ** 2) / (4.0 * lam) + 1.0
        K[M + m, M + m] = span * (lam**2 + freqs[m - 1] ** 2) / (4.0 * lam)
    # Constant and distinct cosines couple only through the boundary.
    for i in range(0, M + 1):
        for j in range(0, M + 1):
            if i != j:
                K[i, j] = 1.0

    def k_z(t):
        t = np.asarray(t, dtype=float)
        shape = t.shape + (n,)
        out = np.zeros(shape)
        inside = (t >= a) & (t <= b)
        dist = np.maximum(a - t, 0.0) + np.maximum(t - b, 0.0)
        decay = np.exp(-lam * dist)
        out[..., 0] = decay
        phase = np.where(inside, t - a, 0.0)
        for m in range(1, M + 1):
            w = freqs[m - 1]
            out[..., m] = np.where(inside, np.cos(w * phase), decay)
            out[..., M + m] = np.where(inside, np.sin(w * phase), 0.0)
        return out

    return K, k_z


def deq_kernel(spec, t, t2):
    """Decaying exponentiated quadratic filter kernel of the smooth variants."""
    t = np.asarray(t, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    return spec.alpha_tilde2 * np.exp(
        -spec.alpha * t**2 - spec.alpha * t2**2 - spec.gamma * (t - t2) ** 2)


def build_inducing(spec):
    """Feature layouts and factored Grams for a model specification."""
    a, b = spec.interval
    if spec.variant in ("gpcm", "cgpcm"):
        if spec.variant == "gpcm":
            t_u = np.linspace(-spec.tau_w, spec.tau_w, spec.n_u)
        else:
            if spec.n_u < 4:
                raise ValueError("causal filter layout needs n_u >= 4")
            delta = 2.0 * spec.tau_w / (spec.n_u - 3)
            t_u = np.linspace(-2.0 * delta, 2.0 * spec.tau_w, spec.n_u)
        t_z = np.linspace(a, b, spec.n_z)
        K_u = deq_kernel(spec, t_u[:, None], t_u[None, :])
        K_z = spec.omega_tilde2 * np.sqrt(np.pi / (2.0 * spec.omega)) * \
            np.exp(-0.5 * spec.omega * (t_z[:, None] - t_z[None, :]) ** 2)
        omega_tilde = np.sqrt(spec.omega_tilde2)

        def k_u(t, _tu=t_u):
            t = np.asarray(t, dtype=float)
            return deq_kernel(spec, t[..., None], _tu)

        def k_z(t, _tz=t_z):
            t = np.asarray(t, dtype=float)
            return omega_tilde * np.exp(
                -spec.omega * (_tz - t[..., None]) ** 2)

        return CovBlocks(t_u=t_u, t_z=t_z, vff_freqs=None,
                         K_u=robust_cholesky(K_u), K_z=robust_cholesky(K_z),
                         k_u=k_u, k_z=k_z)

    t_u = np.linspace(0.0, spec.tau_w, spec.n_u)
    M = (spec.n_z - 1) // 2
    gamma_tilde = np.sqrt(spec.gamma_tilde2)
    K_u = spec.gamma_tilde2 / (2.0 * spec.gamma) * np.exp(
        -spec.gamma * np.abs(t_u[:, None] - t_u[None, :]))
    K_z, k_z = vff_gram(spec.lam, a, b, M)

    def k_u(t, _tu=t_u):
        # Cross-covariance of the unwindowed white noise with its causal
        # exponential smoother; the window enters the integrands instead.
        t = np.asarray(t, dtype=float)
        d = _tu - t[..., None]
        return gamma_tilde * np.exp(-spec.gamma * np.where(d >= 0, d, 0.0)) \
            * (d >= 0)

    freqs = 2.0 * np.pi * np.arange(1, M + 1) / (b - a)
    return CovBlocks(t_u=t_u, t_z=None, vff_freqs=freqs,
                     K_u=robust_cholesky(K_u), K_z=robust_cholesky(K_z),
                     k_u=k_u, k_z=k_z)


def kernel_from_filter(h, spacing, lags, *, causal, kx_rate=None):
    """Kernel of the conditioned process from a gridded filter sample.

    ``h`` is the filter on a uniform grid with the given spacing; for
    the acausal case the grid is symmetric around zero, otherwise it
    starts at zero.  With ``kx_rate`` set, the excitation is an OU
    process with that rate and the kernel is the double convolution
    against its covariance; otherwise the excitation is white noise.
    """
    h = np.asarray(h, dtype=float)
    lags = np.asarray(lags, dtype=float)
    if kx_rate is not None:
        n = h.shape[0]
        # c_m = spacing^2 * sum_{i-j=m} h_i h_j, offsets m*spacing.
        c = np.correlate(h, h, mode="full") * spacing**2
        offsets = spacing * np.arange(-(n - 1), n)
        return _hot.exp_abs_mix(np.ascontiguousarray(c), offsets,
                                np.ascontiguousarray(np.abs(lags)),
                                float(kx_rate))
    steps = np.rint(np.abs(lags) / spacing).astype(int)
    if not np.allclose(steps * spacing, np.abs(lags), atol=1e-9 * spacing):
        raise ValueError("white-noise lags must be multiples of the grid "
                         "spacing")
    n_lags = int(steps.max()) + 1 if steps.size else 1
    if causal:
        grid_k = _hot.causal_autocorr(np.ascontiguousarray(h), n_lags,
                                      float(spacing))
    else:
        full = np.correlate(h, h, mode="full") * spacing
        grid_k = full[h.shape[0] - 1:h.shape[0] - 1 + n_lags]
    return grid_k[steps]


@dataclass
class PriorSample:
    """One joint draw of filter, kernel, and function from the prior."""

    filter_grid: np.ndarray
    h: np.ndarray
    lags: np.ndarray
    k: np.ndarray
    t: np.ndarray
    f: np.ndarray


def _filter_grid(spec, spacing):
    if spec.variant == "rgpcm":
        extent = 8.0 * spec.tau_w
        return np.arange(0.0, extent + spacing / 2, spacing)
    extent = 4.0 * spec.tau_w
    m = int(np.ceil(extent / spacing))
    return spacing * np.arange(-m, m + 1)


def sample_prior(spec, grid, seed):
    """Draw (h, k, f) jointly from the prior on a uniform time grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1-D vector with at least 2 points")
    steps = np.diff(grid)
    spacing = steps[0]
    if spacing <= 0 or not np.allclose(steps, spacing,
                                       rtol=1e-8, atol=1e-12 * abs(spacing)):
        raise ValueError("grid must be uniformly spaced and increasing")

    rng = np.random.default_rng(seed)
    s = _filter_grid(spec, spacing)
    if spec.variant == "rgpcm":
        cell_var = spec.alpha_tilde2 * np.exp(-2.0 * spec.alpha * np.abs(s)) \
            / spacing
        h = rng.normal(size=s.shape) * np.sqrt(cell_var)
        causal, kx_rate = True, spec.lam
    else:
        K_h = deq_kernel(spec, s[:, None], s[None, :])
        h = robust_cholesky(K_h).factor @ rng.normal(size=s.shape)
        causal, kx_rate = spec.variant == "cgpcm", None
        if causal:
            h = h[s >= -spacing / 2]
            s = s[s >= -spacing / 2]

    lags = spacing * np.arange(grid.size)
    k = kernel_from_filter(h, spacing, lags, causal=causal, kx_rate=kx_rate)

    gram = k[np.abs(np.arange(grid.size)[:, None]
                    - np.arange(grid.size)[None, :])]
    f = robust_cholesky(gram).factor @ rng.normal(size=grid.size)
    return PriorSample(filter_grid=s, h=h, lags=lags, k=k, t=grid, f=f)
