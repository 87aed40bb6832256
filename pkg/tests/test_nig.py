"""Tests for the normal-inverse-Gaussian distribution layer."""

import math

import numpy as np
import pytest
from scipy import integrate, optimize

from tailpg.nig import (
    NigParams,
    bessel_k1,
    nig_cdf,
    nig_log_mgf,
    nig_mean,
    nig_pdf,
    nig_sample,
    nig_variance,
)

# Weekly log-return law used throughout: heavy left tail, small scale.
WEEKLY = NigParams(a=35.7, beta=-10.8, delta=0.0204, mu=0.0067)


def _k1_integral(x: float) -> float:
    """Independent Bessel oracle: K1(x) = (1/2) int_0^inf exp(-x(u+1/u)/2) du."""
    integrand = lambda u: 0.5 * math.exp(-0.5 * x * (u + 1.0 / u))
    head, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)
    tail, _ = integrate.quad(integrand, 1.0, np.inf, epsabs=1e-15, epsrel=1e-13)
    return head + tail


class TestBesselK1:
    @pytest.mark.parametrize("x", [0.05, 0.3, 1.0, 4.0, 20.0, 80.0])
    def test_matches_integral_representation(self, x):
        assert bessel_k1(x) == pytest.approx(_k1_integral(x), rel=1e-10)

    def test_reference_value(self):
        assert bessel_k1(1.0) == pytest.approx(0.6019072301972346, rel=1e-12)

    def test_vectorized(self):
        xs = np.array([0.5, 1.0, 2.0])
        np.testing.assert_allclose(bessel_k1(xs), [bessel_k1(x) for x in xs])

    @pytest.mark.parametrize("x", [0.0, -1.0])
    def test_rejects_nonpositive(self, x):
        with pytest.raises(ValueError):
            bessel_k1(x)


class TestParams:
    def test_gamma(self):
        assert WEEKLY.gamma == pytest.approx(math.sqrt(35.7**2 - 10.8**2), rel=1e-15)

    def test_aggregate_scales_delta_and_mu(self):
        agg = WEEKLY.aggregate(26.0)
        assert agg.delta == pytest.approx(26.0 * WEEKLY.delta)
        assert agg.mu == pytest.approx(26.0 * WEEKLY.mu)
        assert (agg.a, agg.beta) == (WEEKLY.a, WEEKLY.beta)

    def test_tilted_shifts_beta(self):
        assert WEEKLY.tilted().beta == pytest.approx(WEEKLY.beta + 1.0)

    def test_aggregate_rejects_nonpositive_horizon(self):
        with pytest.raises(ValueError):
            WEEKLY.aggregate(0.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(a=1.0, beta=1.0, delta=0.5, mu=0.0),  # |beta| = a
            dict(a=-2.0, beta=0.0, delta=0.5, mu=0.0),
            dict(a=2.0, beta=0.0, delta=0.0, mu=0.0),
            dict(a=2.0, beta=0.0, delta=0.5, mu=float("nan")),
        ],
    )
    def test_rejects_inadmissible(self, kwargs):
        with pytest.raises(ValueError):
            NigParams(**kwargs)


class TestDensity:
    def test_matches_direct_formula(self):
        # Re-derive the density from bessel_k1 without the scaled-Bessel trick.
        xs = np.linspace(-0.15, 0.15, 7)
        dev = xs - WEEKLY.mu
        s = np.sqrt(WEEKLY.delta**2 + dev**2)
        direct = (
            WEEKLY.a
            * WEEKLY.delta
            / math.pi
            * np.exp(WEEKLY.delta * WEEKLY.gamma + WEEKLY.beta * dev)
            * bessel_k1(WEEKLY.a * s)
            / s
        )
        np.testing.assert_allclose(nig_pdf(WEEKLY, xs), direct, rtol=1e-12)

    @pytest.mark.parametrize("params", [WEEKLY, WEEKLY.aggregate(26.0).tilted()])
    def test_normalizes_to_one(self, params):
        total, _ = integrate.quad(
            lambda t: nig_pdf(params, t),
            nig_mean(params) - 40 * math.sqrt(nig_variance(params)),
            nig_mean(params) + 40 * math.sqrt(nig_variance(params)),
            epsabs=1e-12,
            epsrel=1e-10,
            limit=400,
        )
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_symmetric_when_beta_zero(self):
        params = NigParams(a=5.0, beta=0.0, delta=0.7, mu=0.3)
        offsets = np.array([0.1, 0.5, 2.0])
        np.testing.assert_allclose(
            nig_pdf(params, params.mu + offsets),
            nig_pdf(params, params.mu - offsets),
            rtol=1e-13,
        )

    def test_far_tail_is_finite(self):
        # a*s ~ 180 here; the naive K1 * exp(beta*dev) product would be 0 * inf.
        values = nig_pdf(WEEKLY, np.array([-5.0, 5.0]))
        assert np.all(np.isfinite(values))
        assert np.all(values >= 0.0)


class TestCdf:
    def test_monotone_with_limits(self):
        xs = np.linspace(-0.3, 0.3, 13)
        vals = nig_cdf(WEEKLY, xs)
        assert np.all(np.diff(vals) > 0.0)
        assert nig_cdf(WEEKLY, -10.0) == 0.0
        assert nig_cdf(WEEKLY, 10.0) == 1.0

    def test_matches_empirical_distribution(self):
        n = 1_000_000
        draws = nig_sample(WEEKLY, n, seed=2024)
        std = math.sqrt(nig_variance(WEEKLY))
        for x in (nig_mean(WEEKLY) - std, nig_mean(WEEKLY), nig_mean(WEEKLY) + 2 * std):
            p = nig_cdf(WEEKLY, x)
            se = math.sqrt(p * (1.0 - p) / n)
            assert abs(np.mean(draws <= x) - p) <= 3.0 * se

    def test_quantile_round_trip(self):
        std = math.sqrt(nig_variance(WEEKLY))
        x90 = optimize.brentq(
            lambda t: nig_cdf(WEEKLY, t) - 0.9,
            nig_mean(WEEKLY) - 20 * std,
            nig_mean(WEEKLY) + 20 * std,
            xtol=1e-12,
        )
        assert nig_cdf(WEEKLY, x90) == pytest.approx(0.9, abs=1e-9)

    def test_vectorized_shape(self):
        xs = np.array([-0.05, 0.0, 0.05])
        vals = nig_cdf(WEEKLY, xs)
        assert vals.shape == xs.shape
        np.testing.assert_allclose(vals, [nig_cdf(WEEKLY, float(x)) for x in xs])


class TestCumulants:
    def test_mean_and_variance_against_quadrature(self):
        lo = nig_mean(WEEKLY) - 40 * math.sqrt(nig_variance(WEEKLY))
        hi = nig_mean(WEEKLY) + 40 * math.sqrt(nig_variance(WEEKLY))
        mean_q, _ = integrate.quad(
            lambda t: t * nig_pdf(WEEKLY, t), lo, hi, epsabs=1e-13, limit=400
        )
        assert mean_q == pytest.approx(nig_mean(WEEKLY), abs=1e-10)
        var_q, _ = integrate.quad(
            lambda t: (t - nig_mean(WEEKLY)) ** 2 * nig_pdf(WEEKLY, t),
            lo,
            hi,
            epsabs=1e-13,
            limit=400,
        )
        assert var_q == pytest.approx(nig_variance(WEEKLY), rel=1e-9)

    def test_log_mgf_against_quadrature(self):
        t = 0.5
        lo = nig_mean(WEEKLY) - 60 * math.sqrt(nig_variance(WEEKLY))
        hi = nig_mean(WEEKLY) + 60 * math.sqrt(nig_variance(WEEKLY))
        mgf_q, _ = integrate.quad(
            lambda x: math.exp(t * x) * nig_pdf(WEEKLY, x),
            lo,
            hi,
            epsabs=1e-13,
            limit=400,
        )
        assert math.log(mgf_q) == pytest.approx(nig_log_mgf(WEEKLY, t), abs=1e-8)

    def test_log_mgf_domain(self):
        with pytest.raises(ValueError):
            nig_log_mgf(WEEKLY, WEEKLY.a - WEEKLY.beta + 0.1)


class TestSampling:
    def test_deterministic_in_seed(self):
        np.testing.assert_array_equal(
            nig_sample(WEEKLY, 1000, seed=7), nig_sample(WEEKLY, 1000, seed=7)
        )
        assert not np.array_equal(
            nig_sample(WEEKLY, 1000, seed=7), nig_sample(WEEKLY, 1000, seed=8)
        )

    def test_moments(self):
        n = 4_000_000
        draws = nig_sample(WEEKLY, n, seed=99)
        se_mean = math.sqrt(nig_variance(WEEKLY) / n)
        assert abs(np.mean(draws) - nig_mean(WEEKLY)) <= 3.0 * se_mean
        assert np.var(draws) == pytest.approx(nig_variance(WEEKLY), rel=0.01)
        # beta < 0 puts the heavy tail on the left.
        skew = np.mean(((draws - np.mean(draws)) / np.std(draws)) ** 3)
        assert skew < -0.5

    def test_convolution_closure(self):
        # Sums of four weekly draws follow the four-period aggregate law.
        rows = 200_000
        sums = nig_sample(WEEKLY, 4 * rows, seed=31).reshape(rows, 4).sum(axis=1)
        agg = WEEKLY.aggregate(4.0)
        std = math.sqrt(nig_variance(agg))
        for x in (nig_mean(agg) - std, nig_mean(agg), nig_mean(agg) + std):
            p = nig_cdf(agg, x)
            se = math.sqrt(p * (1.0 - p) / rows)
            assert abs(np.mean(sums <= x) - p) <= 3.0 * se

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            nig_sample(WEEKLY, 0, seed=1)
