"""Variational inference: mean-field updates, coordinate ascent, the
collapsed bound, and the structured Gibbs sampler with stochastic
hyperparameter gradients.

All variational objects live in hat-space (features premultiplied by the
inverse Gram), where the priors are N(0, K^{-1}) and every update below
is a closed-form Gaussian computation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from . import _hot
from .likelihood import compute_stats, expected_loglik
from .model import build_inducing
from .numerics import PositiveDefiniteError, robust_cholesky

__all__ = [
    "GaussianQ",
    "GibbsChain",
    "FitConfig",
    "FitResult",
    "prior_qu",
    "prior_qz",
    "optimal_qz_mf",
    "optimal_qu_mf",
    "mf_elbo",
    "coordinate_ascent",
    "collapsed_elbo",
    "gibbs_conditional_z",
    "gibbs_conditional_u",
    "gibbs_run",
    "log_Zu_pu",
    "partial_structured_elbo",
    "structured_theta_grad",
    "fit",
]


@dataclass
class GaussianQ:
    """A variational Gaussian over hat-space features."""

    mean: np.ndarray
    cov: np.ndarray

    def second_moment(self):
        return self.cov + np.outer(self.mean, self.mean)

    def sample(self, rng, size):
        if not np.any(self.cov):
            return np.tile(self.mean, (size, 1))
        factor = robust_cholesky(self.cov).factor
        return self.mean + rng.standard_normal((size, self.mean.size)) \
            @ factor.T

    @property
    def dim(self):
        return self.mean.size


@dataclass
class GibbsChain:
    """Post burn-in samples of the structured optimal posterior."""

    u_samples: np.ndarray   # (m, n_u)
    z_samples: np.ndarray   # (m, n_z)
    seed: int
    burn_in: int

    def __post_init__(self):
        if self.u_samples.shape[0] != self.z_samples.shape[0]:
            raise ValueError("chains must have equal lengths")

    @property
    def n_samples(self):
        return self.u_samples.shape[0]

    def q_u_moments(self):
        mean = self.u_samples.mean(axis=0)
        centred = self.u_samples - mean
        cov = centred.T @ centred / max(self.n_samples - 1, 1)
        return GaussianQ(mean=mean, cov=cov)


def prior_qu(cov):
    """Hat-space filter-feature prior N(0, K_u^{-1})."""
    return GaussianQ(mean=np.zeros(cov.n_u), cov=cov.K_u.inv())


def prior_qz(cov):
    """Hat-space excitation-feature prior N(0, K_z^{-1})."""
    return GaussianQ(mean=np.zeros(cov.n_z), cov=cov.K_z.inv())


def _kl_vs_hat_prior(q, gram):
    """KL(N(mean, cov) || N(0, K^{-1})) with K the feature Gram."""
    d = q.dim
    tr = float(np.sum(gram.entries * q.cov))
    quad = float(q.mean @ gram.entries @ q.mean)
    sign, logdet_cov = np.linalg.slogdet(q.cov)
    if sign <= 0:
        raise PositiveDefiniteError("variational covariance not PD in KL")
    return 0.5 * (tr + quad - d - gram.logdet() - logdet_cov)


def _gaussian_from_precision(P, rhs):
    """Mean/cov Gaussian from a precision matrix and linear coefficient."""
    fac = robust_cholesky(P)
    mean = fac.solve(rhs)
    cov = fac.inv()
    cov = 0.5 * (cov + cov.T)
    return GaussianQ(mean=mean, cov=cov), fac


def _z_precision(stats, u_second_moment):
    Kz = stats.cov.K_z.entries
    if stats.n == 0:
        return Kz.copy()
    quad = np.einsum("nua,uv,nvb->ab", stats.I_list, u_second_moment,
                     stats.I_list)
    return Kz + (stats.sum_B + quad) / stats.sigma2


def _u_precision(stats, z_second_moment):
    Ku = stats.cov.K_u.entries
    if stats.n == 0:
        return Ku.copy()
    quad = np.einsum("nau,ab,nbv->uv", stats.I_list, z_second_moment,
                     stats.I_list)
    return Ku + (stats.sum_A + quad) / stats.sigma2


def optimal_qz_mf(stats, q_u):
    """Exact mean-field optimum of the excitation factor given q(u)."""
    P = _z_precision(stats, q_u.second_moment())
    rhs = stats.sum_yI.T @ q_u.mean / stats.sigma2 if stats.n else \
        np.zeros(stats.n_z)
    q, _ = _gaussian_from_precision(P, rhs)
    return q


def optimal_qu_mf(stats, q_z):
    """Exact mean-field optimum of the filter factor given q(z)."""
    P = _u_precision(stats, q_z.second_moment())
    rhs = stats.sum_yI @ q_z.mean / stats.sigma2 if stats.n else \
        np.zeros(stats.n_u)
    q, _ = _gaussian_from_precision(P, rhs)
    return q


def _expected_loglik_gaussian(stats, q_u, q_z):
    """E over q(u) q(z) of the conditionally quadratic log-likelihood."""
    if stats.n == 0:
        return 0.0
    su = q_u.second_moment()
    sz = q_z.second_moment()
    sigma2 = stats.sigma2
    base = -0.5 * stats.n * np.log(2.0 * np.pi * sigma2)
    quad_u = float(np.sum(su * stats.sum_A))
    quad_z = float(np.sum(sz * stats.sum_B))
    quad_uz = float(np.einsum("nua,uv,nvb,ab->", stats.I_list, su,
                              stats.I_list, sz))
    data_term = 2.0 * float(q_u.mean @ stats.sum_yI @ q_z.mean)
    total = stats.y_norm2 + quad_u + stats.sum_c + quad_z + quad_uz \
        - data_term
    return base - total / (2.0 * sigma2)


def mf_elbo(stats, q_u, q_z):
    """Mean-field evidence lower bound for factorized Gaussians."""
    return (_expected_loglik_gaussian(stats, q_u, q_z)
            - _kl_vs_hat_prior(q_u, stats.cov.K_u)
            - _kl_vs_hat_prior(q_z, stats.cov.K_z))


def coordinate_ascent(stats, max_iters=50, tol=1e-6):
    """Alternate exact mean-field optima until the bound stalls.

    Starts from the prior over the filter features; the trace of bound
    values is nondecreasing up to round-off.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    q_u = prior_qu(stats.cov)
    q_z = optimal_qz_mf(stats, q_u)
    trace = [mf_elbo(stats, q_u, q_z)]
    for _ in range(max_iters - 1):
        q_u = optimal_qu_mf(stats, q_z)
        q_z = optimal_qz_mf(stats, q_u)
        trace.append(mf_elbo(stats, q_u, q_z))
        if abs(trace[-1] - trace[-2]) < tol:
            break
    return q_u, q_z, np.asarray(trace)


def _collapsed_terms(stats, u_second_moment, rhs_mean):
    """log-det and fitted-mean terms shared by the collapsed bounds."""
    P = _z_precision(stats, u_second_moment)
    fac = robust_cholesky(P)
    mu = fac.solve(rhs_mean)
    # log|Sigma_z| = -log|P|.
    return -fac.logdet(), float(rhs_mean @ mu)


def collapsed_elbo(stats, q_u):
    """Mean-field bound with the excitation factor analytically optimal."""
    sigma2 = stats.sigma2
    su = q_u.second_moment()
    rhs = stats.sum_yI.T @ q_u.mean / sigma2 if stats.n else \
        np.zeros(stats.n_z)
    logdet_sz, mean_quad = _collapsed_terms(stats, su, rhs)
    val = -0.5 * stats.n * np.log(2.0 * np.pi * sigma2)
    val -= (stats.y_norm2 + float(np.sum(su * stats.sum_A))
            + stats.sum_c) / (2.0 * sigma2)
    val += 0.5 * logdet_sz + 0.5 * stats.cov.K_z.logdet() + 0.5 * mean_quad
    val -= _kl_vs_hat_prior(q_u, stats.cov.K_u)
    return val


def gibbs_conditional_z(stats, u_hat):
    """Optimal structured conditional of the excitation features."""
    u_hat = np.asarray(u_hat, dtype=float)
    P = _z_precision(stats, np.outer(u_hat, u_hat))
    rhs = stats.sum_yI.T @ u_hat / stats.sigma2 if stats.n else \
        np.zeros(stats.n_z)
    q, _ = _gaussian_from_precision(P, rhs)
    return q


def gibbs_conditional_u(stats, z_hat):
    """Optimal structured conditional of the filter features."""
    z_hat = np.asarray(z_hat, dtype=float)
    P = _u_precision(stats, np.outer(z_hat, z_hat))
    rhs = stats.sum_yI @ z_hat / stats.sigma2 if stats.n else \
        np.zeros(stats.n_u)
    q, _ = _gaussian_from_precision(P, rhs)
    return q


def _precision_sample(P, rhs, rng):
    """Draw from N(P^{-1} rhs, P^{-1}) without forming the covariance."""
    fac = robust_cholesky(P)
    mean = fac.solve(rhs)
    noise = solve_triangular(fac.factor.T, rng.standard_normal(rhs.size),
                             lower=False)
    return mean + noise


def gibbs_run(stats, n_samples, burn_in=200, seed=0):
    """Alternate the optimal structured conditionals from a prior draw.

    Burn-in ends early once the running mean of the expected
    log-likelihood over 50-sample windows stabilizes within one standard
    error.  Deterministic given the seed; factorization failures are
    retried once with the precision refreshed by jitter.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    cov = stats.cov
    n_u, n_z = cov.n_u, cov.n_z
    sigma2 = stats.sigma2
    Ku = cov.K_u.entries
    Kz = cov.K_z.entries
    has_data = stats.n > 0
    I_list = np.ascontiguousarray(stats.I_list)
    y = np.ascontiguousarray(stats.y)

    # Initial filter draw from the hat-space prior N(0, K_u^{-1}).
    u_hat = solve_triangular(cov.K_u.factor.T, rng.standard_normal(n_u),
                             lower=False)

    def step(u_hat):
        if has_data:
            S, r = _hot.gibbs_quad_stats(I_list, u_hat, y)
            Pz = Kz + (stats.sum_B + S) / sigma2
            rhs_z = r / sigma2
        else:
            Pz = Kz
            rhs_z = np.zeros(n_z)
        z_hat = _precision_sample(Pz, rhs_z, rng)
        if has_data:
            S, r = _hot.gibbs_quad_stats_u(I_list, z_hat, y)
            Pu = Ku + (stats.sum_A + S) / sigma2
            rhs_u = r / sigma2
        else:
            Pu = Ku
            rhs_u = np.zeros(n_u)
        u_next = _precision_sample(Pu, rhs_u, rng)
        return u_next, z_hat

    window = 50
    win_means = []
    acc = []
    it = 0
    while it < burn_in:
        it += 1
        try:
            u_hat, z_hat = step(u_hat)
        except PositiveDefiniteError:
            u_hat, z_hat = step(u_hat)
        if has_data:
            acc.append(expected_loglik(stats, u_hat, z_hat))
            if len(acc) == window:
                win_means.append((np.mean(acc), np.std(acc) / np.sqrt(window)))
                acc = []
                if len(win_means) >= 2:
                    (m2, se2), (m1, _) = win_means[-1], win_means[-2]
                    if abs(m2 - m1) <= se2:
                        break

    us = np.empty((n_samples, n_u))
    zs = np.empty((n_samples, n_z))
    for i in range(n_samples):
        try:
            u_hat, z_hat = step(u_hat)
        except PositiveDefiniteError:
            u_hat, z_hat = step(u_hat)
        us[i] = u_hat
        zs[i] = z_hat
    return GibbsChain(u_samples=us, z_samples=zs, seed=seed, burn_in=it)


def log_Zu_pu(stats, u_hat):
    """log p(u) Z(u): the structured posterior over the filter features
    up to its normalizer, the target of the stochastic theta-gradient."""
    u_hat = np.asarray(u_hat, dtype=float)
    sigma2 = stats.sigma2
    cov = stats.cov
    rhs = stats.sum_yI.T @ u_hat / sigma2 if stats.n else \
        np.zeros(stats.n_z)
    logdet_sz, mean_quad = _collapsed_terms(stats, np.outer(u_hat, u_hat),
                                            rhs)
    val = -0.5 * stats.n * np.log(2.0 * np.pi * sigma2)
    val -= (stats.y_norm2 + float(u_hat @ stats.sum_A @ u_hat)
            + stats.sum_c) / (2.0 * sigma2)
    val += 0.5 * logdet_sz + 0.5 * cov.K_z.logdet() + 0.5 * mean_quad
    val += -0.5 * cov.n_u * np.log(2.0 * np.pi) - 0.5 * cov.K_u.logdet() \
        - 0.5 * float(u_hat @ cov.K_u.entries @ u_hat)
    return val


def partial_structured_elbo(stats, q_u, n_mc, seed=0, return_se=False):
    """Bound with the excitation conditional exactly optimal given u.

    The expectation over q(u) is estimated by Monte Carlo with ``n_mc``
    draws; with ``return_se`` the standard error of the estimate is also
    returned.
    """
    rng = np.random.default_rng(seed)
    sigma2 = stats.sigma2
    cov = stats.cov
    draws = q_u.sample(rng, n_mc)
    vals = np.empty(n_mc)
    for i, u_hat in enumerate(draws):
        rhs = stats.sum_yI.T @ u_hat / sigma2 if stats.n else \
            np.zeros(stats.n_z)
        logdet_sz, mean_quad = _collapsed_terms(
            stats, np.outer(u_hat, u_hat), rhs)
        vals[i] = (-float(u_hat @ stats.sum_A @ u_hat) / (2.0 * sigma2)
                   + 0.5 * logdet_sz + 0.5 * mean_quad)
    const = -0.5 * stats.n * np.log(2.0 * np.pi * sigma2) \
        - (stats.y_norm2 + stats.sum_c) / (2.0 * sigma2) \
        + 0.5 * cov.K_z.logdet() \
        - _kl_vs_hat_prior(q_u, cov.K_u)
    value = const + float(vals.mean())
    if return_se:
        se = float(vals.std(ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else 0.0
        return value, se
    return value


# ---------------------------------------------------------------------------
# Hyperparameter handling.

def _theta_names(spec):
    if spec.variant in ("gpcm", "cgpcm"):
        return ("alpha", "gamma", "omega", "sigma2")
    return ("alpha", "lam", "gamma", "sigma2")


def _spec_with_theta(spec, names, values):
    """Rebuild a spec at new hyperparameters, re-deriving the tied
    amplitudes (unit prior power, unit feature-Gram diagonals)."""
    updates = dict(zip(names, values))
    out = spec.replace(**updates)
    if out.variant == "cgpcm":
        at2 = 2.0 * np.sqrt(2.0 * out.alpha / np.pi)
    elif out.variant == "gpcm":
        at2 = np.sqrt(2.0 * out.alpha / np.pi)
    else:
        at2 = 2.0 * out.alpha
    out = out.replace(alpha_tilde2=float(at2))
    if out.variant in ("gpcm", "cgpcm"):
        out = out.replace(omega_tilde2=float(np.sqrt(2.0 * out.omega / np.pi)))
    else:
        out = out.replace(gamma_tilde2=float(2.0 * out.gamma))
    return out


def _theta_objective(spec, data, u_samples):
    """Chain-averaged log p(u) Z(u) as a function of the hyperparameters.

    The filter-feature samples are held fixed in feature space; the
    hat-space representation is refreshed under each candidate spec.
    """
    names = _theta_names(spec)
    base_cov = build_inducing(spec)
    u_feat = u_samples @ base_cov.K_u.entries  # hat -> feature space

    def objective(theta):
        cand = _spec_with_theta(spec, names, theta)
        cov = build_inducing(cand)
        stats = compute_stats(cand, cov, data)
        u_hat = cov.K_u.solve(u_feat.T).T
        return float(np.mean([log_Zu_pu(stats, u) for u in u_hat]))

    return names, np.array([getattr(spec, n) for n in names]), objective


def structured_theta_grad(spec, data, chain, theta_subset=None,
                          rel_step=1e-4):
    """Central finite differences of the chain-averaged structured target.

    Falls back to a one-sided difference when a perturbed spec is
    degenerate (for example a nonpositive filter rate).
    """
    if chain.n_samples < 1:
        raise ValueError("chain must contain post burn-in samples")
    names, theta0, objective = _theta_objective(spec, data, chain.u_samples)
    if theta_subset is not None:
        idx = [names.index(n) for n in theta_subset]
    else:
        idx = list(range(len(names)))
    grad = np.zeros(len(idx))
    for j, i in enumerate(idx):
        h = rel_step * abs(theta0[i])
        up = theta0.copy()
        dn = theta0.copy()
        up[i] += h
        dn[i] -= h
        try:
            f_up = objective(up)
        except ValueError:
            f_up = None
        try:
            f_dn = objective(dn)
        except ValueError:
            f_dn = None
        if f_up is not None and f_dn is not None:
            grad[j] = (f_up - f_dn) / (2.0 * h)
        elif f_up is not None:
            grad[j] = (f_up - objective(theta0)) / h
        elif f_dn is not None:
            grad[j] = (objective(theta0) - f_dn) / h
        else:
            raise ValueError(f"both perturbations of {names[i]} invalid")
    return grad


# ---------------------------------------------------------------------------
# Full fitting protocols.

@dataclass
class FitConfig:
    """Knobs of the fitting protocols; defaults target desk scale."""

    max_ca_iters: int = 50
    ca_tol: float = 1e-6
    optimize_theta: bool | None = None   # default depends on the scheme
    optimize_inducing: bool = False
    theta_maxiter: int = 12
    gibbs_samples: int = 1000
    burn_in: int = 200
    outer_rounds: int = 3
    grad_samples: int = 30
    mc_samples: int = 64
    mf_time_budget: float | None = None
    mf_maxiter: int = 2000
    seed: int = 0


@dataclass
class FitResult:
    spec: object
    cov: object
    stats: object
    posterior: object        # (q_u, q_z) pair or GibbsChain
    trace: list              # (iteration, seconds, elbo) triples
    scheme: str
    q_u: GaussianQ | None = None
    q_z: GaussianQ | None = None
    chain: GibbsChain | None = None


def _pack_tril(mat):
    idx = np.tril_indices(mat.shape[0])
    return mat[idx]


def _unpack_tril(vec, dim):
    out = np.zeros((dim, dim))
    out[np.tril_indices(dim)] = vec
    return out


def _mf_objective_factory(spec, data, optimize_theta):
    names = _theta_names(spec)
    cache = {}

    def stats_for(theta_key):
        if theta_key not in cache:
            cand = _spec_with_theta(spec, names, np.exp(np.array(theta_key)))
            cov = build_inducing(cand)
            cache[theta_key] = compute_stats(cand, cov, data)
        return cache[theta_key]

    base_theta = np.log([getattr(spec, n) for n in names])
    return names, base_theta, stats_for


def _fit_mf(spec, data, config, trace, t0):
    """Quasi-Newton ascent over means, covariance factors, and log-theta."""
    from scipy.optimize import minimize

    optimize_theta = bool(config.optimize_theta)
    names, base_theta, stats_for = _mf_objective_factory(
        spec, data, optimize_theta)
    stats0 = stats_for(tuple(base_theta))
    cov0 = stats0.cov
    n_u, n_z = cov0.n_u, cov0.n_z
    q_u0 = prior_qu(cov0)
    q_z0 = prior_qz(cov0)

    x0 = np.concatenate([
        q_u0.mean, _pack_tril(robust_cholesky(q_u0.cov).factor),
        q_z0.mean, _pack_tril(robust_cholesky(q_z0.cov).factor),
        base_theta if optimize_theta else np.empty(0),
    ])
    n_trilu = n_u * (n_u + 1) // 2
    n_trilz = n_z * (n_z + 1) // 2

    def unpack(x):
        o = 0
        mu = x[o:o + n_u]; o += n_u
        lu = _unpack_tril(x[o:o + n_trilu], n_u); o += n_trilu
        mz = x[o:o + n_z]; o += n_z
        lz = _unpack_tril(x[o:o + n_trilz], n_z); o += n_trilz
        theta = x[o:] if optimize_theta else base_theta
        q_u = GaussianQ(mean=mu, cov=lu @ lu.T)
        q_z = GaussianQ(mean=mz, cov=lz @ lz.T)
        return q_u, q_z, theta

    def negative_bound(x):
        q_u, q_z, theta = unpack(x)
        try:
            stats = stats_for(tuple(theta))
            return -mf_elbo(stats, q_u, q_z)
        except (PositiveDefiniteError, ValueError, np.linalg.LinAlgError):
            return 1e12

    state = {"best": -np.inf, "nit": 0, "xk": x0}

    def callback(xk):
        state["nit"] += 1
        state["xk"] = np.array(xk)
        val = -negative_bound(xk)
        state["best"] = max(state["best"], val)
        trace.append((len(trace), time.perf_counter() - t0, val))
        if config.mf_time_budget is not None and \
                time.perf_counter() - t0 > config.mf_time_budget:
            raise StopIteration

    try:
        res = minimize(negative_bound, x0, method="L-BFGS-B",
                       callback=callback,
                       options={"maxiter": config.mf_maxiter,
                                "maxfun": 10**7})
        x_best = res.x
    except StopIteration:
        # Budget hit: keep the last iterate recorded by the callback.
        x_best = state["xk"]
    q_u, q_z, theta = unpack(x_best)
    final_spec = _spec_with_theta(spec, names, np.exp(theta)) \
        if optimize_theta else spec
    stats = stats_for(tuple(theta))
    val = mf_elbo(stats, q_u, q_z)
    trace.append((len(trace), time.perf_counter() - t0, val))
    return final_spec, stats, q_u, q_z


def _optimize_collapsed_theta(spec, data, q_u, config, trace, t0):
    """Quasi-Newton over log-theta of the collapsed bound, q(u) fixed."""
    from scipy.optimize import minimize

    names = _theta_names(spec)
    x0 = np.log([getattr(spec, n) for n in names])

    def neg(x):
        try:
            cand = _spec_with_theta(spec, names, np.exp(x))
            cov = build_inducing(cand)
            stats = compute_stats(cand, cov, data)
            return -collapsed_elbo(stats, q_u)
        except (PositiveDefiniteError, ValueError, np.linalg.LinAlgError):
            return 1e12

    def callback(xk):
        trace.append((len(trace), time.perf_counter() - t0, -neg(xk)))

    res = minimize(neg, x0, method="L-BFGS-B", callback=callback,
                   options={"maxiter": config.theta_maxiter})
    best = res.x if np.isfinite(res.fun) and -res.fun > -neg(x0) else x0
    return _spec_with_theta(spec, names, np.exp(best))


def _optimize_structured_theta(spec, data, chain, config):
    """Quasi-Newton over log-theta of the chain-averaged structured target."""
    from scipy.optimize import minimize

    sub = chain.u_samples[:: max(1, chain.n_samples // config.grad_samples)]
    sub_chain = replace(chain, u_samples=sub,
                        z_samples=chain.z_samples[:sub.shape[0]])
    names, theta0, objective = _theta_objective(spec, data,
                                                sub_chain.u_samples)

    def neg(x):
        try:
            return -objective(np.exp(x))
        except (PositiveDefiniteError, ValueError, np.linalg.LinAlgError):
            return 1e12

    x0 = np.log(theta0)
    res = minimize(neg, x0, method="L-BFGS-B",
                   options={"maxiter": config.theta_maxiter})
    best = res.x if np.isfinite(res.fun) and -res.fun > -neg(x0) else x0
    return _spec_with_theta(spec, names, np.exp(best))


def fit(spec, data, scheme, config=None):
    """Fit a model with one of the four inference schemes.

    ``ca`` runs coordinate ascent at fixed hyperparameters.  ``mf``
    optimizes the factorized bound with a quasi-Newton routine.
    ``collapsed`` runs CA, optimizes the collapsed bound over the
    hyperparameters with q(u) fixed, then reruns CA.  ``structured``
    runs the collapsed protocol, then alternates Gibbs sampling with
    stochastic hyperparameter steps.
    """
    if scheme not in ("mf", "ca", "collapsed", "structured"):
        raise ValueError(f"unknown scheme {scheme!r}")
    config = config or FitConfig()
    if data.n == 0 and (config.optimize_theta or
                        scheme in ("collapsed", "structured")):
        raise ValueError("hyperparameter optimization needs data")
    trace = []
    t0 = time.perf_counter()

    def ca_phase(current_spec):
        cov = build_inducing(current_spec)
        stats = compute_stats(current_spec, cov, data)
        q_u, q_z, tr = coordinate_ascent(stats, config.max_ca_iters,
                                         config.ca_tol)
        for v in tr:
            trace.append((len(trace), time.perf_counter() - t0, float(v)))
        return stats, q_u, q_z

    if scheme == "ca":
        stats, q_u, q_z = ca_phase(spec)
        return FitResult(spec=spec, cov=stats.cov, stats=stats,
                         posterior=(q_u, q_z), trace=trace, scheme=scheme,
                         q_u=q_u, q_z=q_z)

    if scheme == "mf":
        if config.optimize_theta is None:
            config = replace(config, optimize_theta=False)
        final_spec, stats, q_u, q_z = _fit_mf(spec, data, config, trace, t0)
        return FitResult(spec=final_spec, cov=stats.cov, stats=stats,
                         posterior=(q_u, q_z), trace=trace, scheme=scheme,
                         q_u=q_u, q_z=q_z)

    optimize_theta = True if config.optimize_theta is None \
        else config.optimize_theta

    # Collapsed protocol: CA, theta on the collapsed bound, CA again.
    stats, q_u, q_z = ca_phase(spec)
    current = spec
    if optimize_theta:
        current = _optimize_collapsed_theta(current, data, q_u, config,
                                            trace, t0)
        stats, q_u, q_z = ca_phase(current)

    if scheme == "collapsed":
        return FitResult(spec=current, cov=stats.cov, stats=stats,
                         posterior=(q_u, q_z), trace=trace, scheme=scheme,
                         q_u=q_u, q_z=q_z)

    # Structured protocol: Gibbs chains alternating with theta steps.
    rng = np.random.default_rng(config.seed)
    chain = None
    rounds = config.outer_rounds if optimize_theta else 1
    for round_idx in range(rounds):
        chain_seed = int(rng.integers(2**31 - 1))
        chain = gibbs_run(stats, config.gibbs_samples, config.burn_in,
                          seed=chain_seed)
        if optimize_theta and round_idx < rounds - 1:
            current = _optimize_structured_theta(current, data, chain,
                                                 config)
            stats, q_u, q_z = ca_phase(current)
        val, se = partial_structured_elbo(stats, q_u, config.mc_samples,
                                          seed=chain_seed, return_se=True)
        trace.append((len(trace), time.perf_counter() - t0, float(val)))
    return FitResult(spec=current, cov=stats.cov, stats=stats,
                     posterior=chain, trace=trace, scheme=scheme,
                     q_u=q_u, q_z=q_z, chain=chain)
