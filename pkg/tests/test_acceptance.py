"""Acceptance gate: one test per headline claim of the package.

Each test measures its claim end to end and funnels the result through
``_verdict``, which prints a single PASS/FAIL line (visible under ``-rA``
or on failure) and asserts.  Tolerances are pinned here on purpose;
loosening them is a behaviour change, not a test fix.
"""

from __future__ import annotations

import filecmp
import json
import math
import os
from importlib.resources import files

import numpy as np
import pytest
from scipy.optimize import brentq

from tailpg.evt import (
    GpdParams,
    ThresholdConfig,
    cvar_sa,
    estimate_cvar,
    fit_gpd_mom,
    gpd_cdf,
    gpd_quantile,
    gpd_sample,
    ad_statistic,
)
from tailpg.experiment import load_spec, report, run_experiment
from tailpg.gpd_env import GpdEnvConfig, cvar_closed_form
from tailpg.hedging import (
    HedgeConfig,
    HedgeMarket,
    brute_force_curve,
    call_delta,
    call_gamma,
    call_price,
    risk_neutral_params,
    zeta_q,
)
from tailpg.nig import NigParams, nig_log_mgf, nig_sample
from tailpg.training import TrainConfig, finite_diff_gradient

# Closed-form CVaR of GPD(xi=0.4, scale=2) at level 0.998; frozen from the
# scale-family formula s/(1-xi) * (1 + ((1-alpha)^-xi - 1)/xi).
TRUE_CVAR_998 = 95.09370283178589

# Optimal hedge ratio and objective of the option-overlay problem, estimated
# once by brute force on 10^6 paths (reproduced by the full-scale curve test).
THETA_STAR = 0.5991
J_STAR = 40.37


def _verdict(criterion: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def _preset(name: str) -> str:
    return (files("tailpg") / "presets" / f"{name}.json").read_text()


# -----------------------------------------------------------------------------
# 1. GPD primitive oracles
# -----------------------------------------------------------------------------


def _ad_transcription(params: GpdParams, excesses: np.ndarray) -> float:
    """Literal double-sum rendering of the Anderson-Darling statistic."""
    z = sorted(float(gpd_cdf(params, y)) for y in excesses)
    k = len(z)
    total = 0.0
    for j in range(1, k + 1):
        total += (2 * j - 1) * (math.log(z[j - 1]) + math.log(1.0 - z[k - j]))
    return -k - total / k


def test_criterion_1_gpd_oracle_suite():
    # cdf/quantile round trips across light, exponential and heavy shapes
    worst_p = worst_x = 0.0
    probs = np.array([1e-6, 1e-3, 0.05, 0.5, 0.9, 0.99, 0.9999, 1.0 - 1e-9])
    for xi in (-0.7, -0.3, 0.0, 0.25, 0.4, 0.9, 1.5):
        for sigma in (0.5, 2.0, 10.0):
            params = GpdParams(xi=xi, sigma=sigma)
            q = np.asarray(gpd_quantile(params, probs))
            worst_p = max(worst_p, float(np.max(np.abs(gpd_cdf(params, q) - probs))))
            x = np.asarray(gpd_quantile(params, np.linspace(0.01, 0.99, 23)))
            back = np.asarray(gpd_quantile(params, gpd_cdf(params, x)))
            worst_x = max(worst_x, float(np.max(np.abs(back - x) / np.maximum(x, 1.0))))

    # moment-fit round trip: the fitted pair must reproduce the sample moments
    crafted = fit_gpd_mom([2.0, 2.0, 4.0, 4.0])  # mean 3, divisor-k variance 1
    mom_exact = (
        crafted.xi == -4.0
        and crafted.sigma == 15.0
        and crafted.sigma / (1.0 - crafted.xi) == 3.0
        and crafted.sigma**2 / ((1.0 - crafted.xi) ** 2 * (1.0 - 2.0 * crafted.xi)) == 1.0
    )
    worst_mom = 0.0
    rng = np.random.default_rng(5150)
    for _ in range(50):
        y = rng.gamma(2.0, 1.5, rng.integers(10, 200))
        fit = fit_gpd_mom(y)
        m, s2 = float(np.mean(y)), float(np.mean((y - np.mean(y)) ** 2))
        implied_m = fit.sigma / (1.0 - fit.xi)
        implied_v = fit.sigma**2 / ((1.0 - fit.xi) ** 2 * (1.0 - 2.0 * fit.xi))
        worst_mom = max(worst_mom, abs(implied_m - m) / m, abs(implied_v - s2) / s2)

    # Anderson-Darling statistic against its literal transcription
    worst_ad = 0.0
    rng = np.random.default_rng(424242)
    for _ in range(1000):
        params = GpdParams(xi=float(rng.uniform(-0.4, 0.9)), sigma=float(rng.uniform(0.5, 5.0)))
        y = gpd_sample(params, int(rng.integers(20, 300)), rng)
        a2 = ad_statistic(params, y)
        naive = _ad_transcription(params, y)
        worst_ad = max(worst_ad, abs(a2 - naive) / max(1.0, abs(naive)))

    ok = worst_p <= 1e-10 and worst_x <= 1e-10 and mom_exact and worst_mom <= 1e-12 and worst_ad <= 1e-10
    _verdict(
        "criterion 1 (gpd oracle suite)",
        ok,
        f"roundtrip errs {worst_p:.1e}/{worst_x:.1e}, mom exact={mom_exact} "
        f"(rel {worst_mom:.1e}), AD transcription rel diff {worst_ad:.1e}",
    )


# -----------------------------------------------------------------------------
# 2. Tail estimator accuracy at the 0.998 level
# -----------------------------------------------------------------------------


def test_criterion_2_pot_estimator_accuracy():
    closed = cvar_closed_form(GpdEnvConfig(xi=0.4, vartheta=0.4, b=2.0), 0.4, 0.998)
    assert abs(closed - TRUE_CVAR_998) <= 1e-9

    params = GpdParams(xi=0.4, sigma=2.0)
    pot_sq = sa_sq = 0.0
    for i in range(100):
        rng = np.random.default_rng(i)
        x = gpd_sample(params, 2000, rng)
        pot_sq += (estimate_cvar(x, 0.998).value - TRUE_CVAR_998) ** 2
        sa_sq += (cvar_sa(x, 0.998) - TRUE_CVAR_998) ** 2
    rmse_pot, rmse_sa = math.sqrt(pot_sq / 100), math.sqrt(sa_sq / 100)
    _verdict(
        "criterion 2 (pot estimator accuracy)",
        rmse_pot < rmse_sa,
        f"POT rmse {rmse_pot:.3f} vs SA rmse {rmse_sa:.3f} over 100 samples of n=2000",
    )


# -----------------------------------------------------------------------------
# 3. Controlled-environment training comparison (desk scale)
# -----------------------------------------------------------------------------


def test_criterion_3_controlled_training_comparison(tmp_path):
    out = tmp_path / "gpd-desk"
    run_experiment(load_spec(_preset("gpd-desk")), out)
    summary = report(out)
    rmse_pot = summary["pot"]["final_rmse_theta"]
    rmse_sa = summary["sa"]["final_rmse_theta"]
    med = summary["pot"]["median_final_theta_error"]
    _verdict(
        "criterion 3 (controlled training comparison)",
        rmse_pot <= rmse_sa and med < 0.15,
        f"final rmse_theta POT {rmse_pot:.6f} vs SA {rmse_sa:.6f}; median |err| {med:.4f} < 0.15",
    )


# -----------------------------------------------------------------------------
# 4. Option-pricing stack under the tilted NIG law
# -----------------------------------------------------------------------------


def test_criterion_4_nig_pricing_suite():
    market = HedgeMarket.default()
    q = market.q_params

    # location correction: root of the one-week cumulant equation, found
    # independently of the closed form used by the library
    root = brentq(
        lambda z: nig_log_mgf(NigParams(q.a, q.beta, q.delta, q.mu + z), 1.0) - market.r,
        -0.5,
        0.5,
        xtol=1e-15,
    )
    zeta = zeta_q(market)
    zeta_ok = abs(zeta - root) <= 1e-12 and abs(zeta - 0.0182759612221188) <= 1e-9

    mart_gap = abs(nig_log_mgf(risk_neutral_params(market, 1.0), 1.0) - market.r)

    worst_delta = worst_gamma = 0.0
    for spot in (850.0, 1000.0, 1180.0):
        for tau in (5.2, 26.0):
            h = spot * 3e-4
            fd_delta = (call_price(market, spot + h, 1000.0, tau)
                        - call_price(market, spot - h, 1000.0, tau)) / (2.0 * h)
            delta = call_delta(market, spot, 1000.0, tau)
            worst_delta = max(worst_delta, abs(delta - fd_delta) / abs(fd_delta))
            h = spot * 2e-3
            fd_gamma = (call_price(market, spot + h, 1000.0, tau)
                        - 2.0 * call_price(market, spot, 1000.0, tau)
                        + call_price(market, spot - h, 1000.0, tau)) / h**2
            gamma = call_gamma(market, spot, 1000.0, tau)
            worst_gamma = max(worst_gamma, abs(gamma - fd_gamma) / abs(fd_gamma))

    # at-the-money 26-week premium vs risk-neutral Monte-Carlo
    z = nig_sample(risk_neutral_params(market, 26.0), 1_000_000, seed=777)
    discounted = math.exp(-market.r * 26.0) * np.maximum(market.s0 * np.exp(z) - 1000.0, 0.0)
    mc = float(np.mean(discounted))
    se = float(np.std(discounted) / math.sqrt(discounted.size))
    price = call_price(market, market.s0, 1000.0, 26.0)
    mc_ok = abs(price - mc) <= 3.0 * se

    ok = zeta_ok and mart_gap <= 1e-12 and worst_delta <= 1e-5 and worst_gamma <= 1e-3 and mc_ok
    _verdict(
        "criterion 4 (nig pricing suite)",
        ok,
        f"zeta gap {abs(zeta - root):.1e}, martingale gap {mart_gap:.1e}, "
        f"delta rel {worst_delta:.1e}, gamma rel {worst_gamma:.1e}, "
        f"price {price:.4f} vs MC {mc:.4f} (3 SE = {3 * se:.4f})",
    )


# -----------------------------------------------------------------------------
# 5. Hedging objective curve by brute force
# -----------------------------------------------------------------------------


def test_criterion_5_hedging_objective_curve():
    thetas = np.round(np.arange(0.0, 1.0 + 1e-9, 0.05), 10)
    grid, values = brute_force_curve(HedgeMarket.default(), HedgeConfig(), thetas, 200_000, seed=7)
    argmin = float(grid[int(np.argmin(values))])
    _verdict(
        "criterion 5 (hedging objective curve)",
        0.45 <= argmin <= 0.75,
        f"argmin {argmin:.2f} in [0.45, 0.75] on 2e5 paths (min {float(np.min(values)):.3f})",
    )


@pytest.mark.fullscale
@pytest.mark.skipif(os.environ.get("TAILPG_FULLSCALE") != "1",
                    reason="set TAILPG_FULLSCALE=1 for the 10^6-path curve (minutes)")
def test_criterion_5_full_scale_curve():
    thetas = np.round(np.arange(0.0, 1.0 + 1e-9, 0.05), 10)
    grid, values = brute_force_curve(HedgeMarket.default(), HedgeConfig(), thetas, 1_000_000, seed=7)
    argmin = float(grid[int(np.argmin(values))])
    j_min = float(np.min(values))
    _verdict(
        "criterion 5 full scale (hedging objective curve)",
        abs(argmin - THETA_STAR) <= 0.05 and abs(j_min - J_STAR) <= 0.15 * J_STAR,
        f"argmin {argmin:.2f} (target {THETA_STAR} +/- 0.05), min {j_min:.2f} "
        f"(target {J_STAR} +/- 15%)",
    )


# -----------------------------------------------------------------------------
# 6. Hedging training comparison (desk scale)
# -----------------------------------------------------------------------------


def test_criterion_6_hedging_training_comparison(tmp_path):
    out = tmp_path / "hedging-desk"
    manifest = run_experiment(load_spec(_preset("hedging-desk")), out)
    errs = {
        est: float(np.mean([abs(theta[0] - THETA_STAR) for theta in finals]))
        for est, finals in manifest["final_thetas"].items()
    }
    _verdict(
        "criterion 6 (hedging training comparison)",
        errs["pot"] <= errs["sa"],
        f"mean final |theta - {THETA_STAR}|: POT {errs['pot']:.4f} vs SA {errs['sa']:.4f}",
    )


# -----------------------------------------------------------------------------
# 7. Reproducibility and common-random-number null
# -----------------------------------------------------------------------------


class _PolicyBlindEnv:
    """Costs depend on the seed only, never on the policy."""

    dim = 2

    def sample_costs(self, theta, n, seed):
        return np.random.default_rng(seed).lognormal(0.0, 1.0, n)


def test_criterion_7_reproducibility(tmp_path):
    tiny = {
        "schema_version": 1,
        "name": "tiny",
        "environment": {"name": "gpd", "params": {"xi": 0.4, "vartheta": 0.4, "b": 2.0}},
        "train": {"theta0": [1.0], "n": 300, "iterations": 3, "alpha": 0.99},
        "estimators": ["pot", "sa"],
        "runs": 2,
        "base_seed": 4242,
    }
    hedged = {
        "schema_version": 1,
        "name": "tiny-hedge",
        "environment": {"name": "hedging", "params": {}},
        "train": {
            "theta0": [0.0], "n": 150, "iterations": 2, "eps": 0.05,
            "alpha": 0.99, "threshold": {"fit_method": "mom"},
        },
        "estimators": ["pot"],
        "runs": 1,
        "base_seed": 7,
    }
    identical = True
    compared = 0
    for spec_dict in (tiny, hedged):
        a, b = tmp_path / f"{spec_dict['name']}-a", tmp_path / f"{spec_dict['name']}-b"
        run_experiment(load_spec(json.dumps(spec_dict)), a)
        run_experiment(load_spec(json.dumps(spec_dict)), b)
        for trace in sorted(p.name for p in a.glob("*.csv")):
            identical &= filecmp.cmp(a / trace, b / trace, shallow=False)
            compared += 1

    null_ok = True
    env = _PolicyBlindEnv()
    for estimator in ("pot", "sa"):
        cfg = TrainConfig(theta0=(0.0, 0.0), n=400, iterations=1, alpha=0.95,
                          estimator=estimator, threshold=ThresholdConfig(fit_method="mle"))
        res = finite_diff_gradient(env, np.zeros(2), cfg, seed=123)
        null_ok &= bool(np.all(res.gradient == 0.0))

    _verdict(
        "criterion 7 (reproducibility)",
        identical and compared > 0 and null_ok,
        f"{compared} trace files byte-identical across reruns; "
        f"policy-blind gradient exactly zero: {null_ok}",
    )
