"""Hot numeric kernels: numba-jitted with a pure-numpy fallback.

Set ``CONVSPEC_NUMBA=0`` to force the numpy path (useful for debugging
and for the benchmark in ``benchmarks/bench_kernels.py``).
``CONVSPEC_THREADS`` caps the numba thread pool.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "USE_NUMBA",
    "gibbs_quad_stats",
    "gibbs_quad_stats_u",
    "exp_abs_mix",
    "causal_autocorr",
]


def _numpy_gibbs_quad_stats(I_stack, w, y):
    # v_i = I_i^T w; returns (sum_i v_i v_i^T, sum_i y_i v_i).
    v = np.einsum("nuz,u->nz", I_stack, w)
    return v.T @ v, v.T @ y


def _numpy_gibbs_quad_stats_u(I_stack, w, y):
    # v_i = I_i w; returns (sum_i v_i v_i^T, sum_i y_i v_i).
    v = np.einsum("nuz,z->nu", I_stack, w)
    return v.T @ v, v.T @ y


def _numpy_exp_abs_mix(coeffs, offsets, lags, rate):
    # sum_m coeffs[m] * exp(-rate * |lag - offsets[m]|) for each lag.
    d = np.abs(lags[:, None] - offsets[None, :])
    return np.exp(-rate * d) @ coeffs


def _numpy_causal_autocorr(h, n_lags, spacing):
    # k[j] = spacing * (0.5*h[j]*h[0] + sum_{i>=1} h[i+j]*h[i]); trapezoid
    # start weight because the integrand does not vanish at the origin.
    n = h.shape[0]
    out = np.zeros(n_lags)
    for j in range(min(n_lags, n)):
        prods = h[j:] * h[: n - j]
        out[j] = spacing * (prods.sum() - 0.5 * prods[0])
    return out


def _env_flag(name, default=True):
    raw = os.environ.get(name)
    if raw is None:
        return default
    return raw.strip().lower() not in ("0", "false", "off", "no")


USE_NUMBA = _env_flag("CONVSPEC_NUMBA", default=True)

if USE_NUMBA:
    try:
        import numba
        from numba import njit, prange

        threads = os.environ.get("CONVSPEC_THREADS")
        if threads:
            numba.set_num_threads(max(1, int(threads)))

        @njit(cache=True)
        def _nb_gibbs_quad_stats(I_stack, w, y):
            n, n_u, n_z = I_stack.shape
            S = np.zeros((n_z, n_z))
            r = np.zeros(n_z)
            v = np.zeros(n_z)
            for i in range(n):
                for q in range(n_z):
                    acc = 0.0
                    for p in range(n_u):
                        acc += I_stack[i, p, q] * w[p]
                    v[q] = acc
                for q in range(n_z):
                    r[q] += y[i] * v[q]
                    for s in range(n_z):
                        S[q, s] += v[q] * v[s]
            return S, r

        @njit(cache=True)
        def _nb_gibbs_quad_stats_u(I_stack, w, y):
            n, n_u, n_z = I_stack.shape
            S = np.zeros((n_u, n_u))
            r = np.zeros(n_u)
            v = np.zeros(n_u)
            for i in range(n):
                for p in range(n_u):
                    acc = 0.0
                    for q in range(n_z):
                        acc += I_stack[i, p, q] * w[q]
                    v[p] = acc
                for p in range(n_u):
                    r[p] += y[i] * v[p]
                    for s in range(n_u):
                        S[p, s] += v[p] * v[s]
            return S, r

        @njit(cache=True, parallel=True)
        def _nb_exp_abs_mix(coeffs, offsets, lags, rate):
            out = np.zeros(lags.shape[0])
            for i in prange(lags.shape[0]):
                acc = 0.0
                for m in range(offsets.shape[0]):
                    acc += coeffs[m] * np.exp(-rate * abs(lags[i] - offsets[m]))
                out[i] = acc
            return out

        @njit(cache=True)
        def _nb_causal_autocorr(h, n_lags, spacing):
            n = h.shape[0]
            out = np.zeros(n_lags)
            for j in range(min(n_lags, n)):
                acc = -0.5 * h[j] * h[0]
                for i in range(n - j):
                    acc += h[i + j] * h[i]
                out[j] = spacing * acc
            return out

        gibbs_quad_stats = _nb_gibbs_quad_stats
        gibbs_quad_stats_u = _nb_gibbs_quad_stats_u
        exp_abs_mix = _nb_exp_abs_mix
        causal_autocorr = _nb_causal_autocorr
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if not USE_NUMBA:
    gibbs_quad_stats = _numpy_gibbs_quad_stats
    gibbs_quad_stats_u = _numpy_gibbs_quad_stats_u
    exp_abs_mix = _numpy_exp_abs_mix
    causal_autocorr = _numpy_causal_autocorr
