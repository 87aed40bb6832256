"""Tail-risk policy gradients: extreme-quantile CVaR estimation and optimization."""

from .evt import (
    CvarEstimate,
    GpdFitError,
    GpdParams,
    TailFit,
    ThresholdConfig,
    ad_pvalue,
    ad_statistic,
    cvar_pot,
    cvar_sa,
    estimate_cvar,
    fit_gpd_mle,
    fit_gpd_mom,
    gpd_cdf,
    gpd_loglik,
    gpd_pdf,
    gpd_quantile,
    gpd_sample,
    select_threshold,
    var_empirical,
)
from .gpd_env import GpdEnv, GpdEnvConfig, cvar_closed_form
from .hedging import (
    HedgeConfig,
    HedgeMarket,
    HedgingEnv,
    brute_force_curve,
    call_delta,
    call_gamma,
    call_price,
    positions,
    simulate_paths,
    zeta_q,
)
from .nig import NigParams, nig_cdf, nig_pdf, nig_sample
from .training import (
    AdamState,
    TrainConfig,
    TrainTrace,
    adam_step,
    finite_diff_gradient,
    mix_seed,
    rmse_report,
    train,
)

__version__ = "0.1.0"
