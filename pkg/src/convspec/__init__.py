"""Nonparametric kernel and PSD learning for noisy 1-D signals.

Gaussian process convolution models (acausal, causal, and rough variants)
with mean-field, coordinate-ascent, collapsed, and structured-Gibbs
variational inference.
"""

from .numerics import (
    PositiveDefiniteError,
    PsdMatrix,
    bvn_cdf,
    bvn_cdf_grad,
    erf,
    robust_cholesky,
)
from .exppoly import (
    AffineLimit,
    DivergentIntegralError,
    ExpQuadSum,
    QuadForm,
    const,
    eq_integrate_box,
    eq_multiply,
    eq_substitute,
    var,
)
from .model import (
    CovBlocks,
    ModelSpec,
    PriorSample,
    build_inducing,
    init_hyperparameters,
    kernel_from_filter,
    sample_prior,
    standard_kernel,
    vff_gram,
)
from .integrals import (
    IntegralSet,
    compute_I_hx,
    compute_I_hx_cross,
    compute_I_hz,
    compute_I_ux,
    compute_I_ux_cross,
    compute_I_uz,
    compute_integral_set,
)
from .likelihood import DataSet, SuffStats, compute_stats, expected_loglik
from .inference import (
    FitConfig,
    FitResult,
    GaussianQ,
    GibbsChain,
    collapsed_elbo,
    coordinate_ascent,
    fit,
    gibbs_conditional_u,
    gibbs_conditional_z,
    gibbs_run,
    log_Zu_pu,
    mf_elbo,
    optimal_qu_mf,
    optimal_qz_mf,
    partial_structured_elbo,
    prior_qu,
    prior_qz,
    structured_theta_grad,
)
from .predict import (
    Prediction,
    metrics,
    predict_function,
    predict_kernel,
    predict_psd,
)

__version__ = "0.1.0"
