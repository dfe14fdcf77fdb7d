import math

import numpy as np
import pytest
from scipy import integrate
from scipy import stats as sps

from rxonset.renewal import (
    DegenerateDataError,
    ExpParams,
    FitError,
    WeibullParams,
    exp_loglik,
    fit_exponential,
    fit_weibull,
    mean_interval,
    weibull_logpdf,
    weibull_loglik,
)


class TestExpLoglik:
    def test_single_unit(self):
        assert exp_loglik([1], ExpParams(1.0)) == pytest.approx(-1.0)

    def test_hand_evaluation(self):
        # 3*log(0.25) - 0.25*12
        assert exp_loglik([2, 4, 6], ExpParams(0.25)) == pytest.approx(
            -7.1588830833596715, rel=1e-12
        )

    def test_empty_sum_convention(self):
        assert exp_loglik([], ExpParams(0.5)) == 0.0

    def test_nonpositive_tau_rejected(self):
        with pytest.raises(ValueError):
            exp_loglik([2, 0], ExpParams(1.0))

    def test_matches_scipy(self, rng):
        taus = rng.integers(1, 500, size=50)
        rate = 0.013
        expected = sps.expon(scale=1 / rate).logpdf(taus).sum()
        assert exp_loglik(taus.tolist(), ExpParams(rate)) == pytest.approx(expected, rel=1e-12)


class TestFitExponential:
    def test_closed_form(self):
        assert fit_exponential([2, 4, 6]).rate == pytest.approx(0.25)
        assert fit_exponential([10]).rate == pytest.approx(0.1)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fit_exponential([])

    def test_simulation_recovery(self, rng):
        taus = rng.exponential(scale=50.0, size=10_000)
        rate = fit_exponential(taus.tolist()).rate
        assert abs(rate - 0.02) / 0.02 < 0.05

    def test_rate_is_exact_closed_form(self, rng):
        for _ in range(100):
            taus = rng.integers(1, 2000, size=int(rng.integers(1, 40))).tolist()
            fit = fit_exponential(taus)
            assert fit.rate == len(taus) / math.fsum(taus)
            # product identity; float division round-trip allows 1 ulp
            mean = math.fsum(taus) / len(taus)
            assert fit.rate * mean == pytest.approx(1.0, abs=5e-16)

    def test_maximizes_loglik(self, rng):
        taus = rng.integers(1, 400, size=200).tolist()
        fit = fit_exponential(taus)
        best = exp_loglik(taus, fit)
        for bump in (0.99, 1.01):
            assert exp_loglik(taus, ExpParams(fit.rate * bump)) < best


class TestWeibullLoglik:
    def test_exponential_reduction_single(self):
        # log(0.01) - 1
        assert weibull_loglik([100], WeibullParams(1.0, 100.0)) == pytest.approx(
            -5.605170185988091, rel=1e-12
        )

    def test_hand_evaluation(self):
        # log(2/100) - 1
        assert weibull_loglik([100], WeibullParams(2.0, 100.0)) == pytest.approx(
            -4.912023005428146, rel=1e-12
        )

    def test_empty_sum_convention(self):
        assert weibull_loglik([], WeibullParams(2.0, 100.0)) == 0.0

    def test_nonpositive_tau_rejected(self):
        with pytest.raises(ValueError):
            weibull_loglik([-1], WeibullParams(2.0, 100.0))

    def test_reduction_identity_property(self, rng):
        for _ in range(300):
            n = int(rng.integers(1, 60))
            taus = rng.integers(1, 1200, size=n).tolist()
            scale = float(rng.uniform(5, 800))
            diff = weibull_loglik(taus, WeibullParams(1.0, scale)) - exp_loglik(
                taus, ExpParams(1.0 / scale)
            )
            assert abs(diff) < 1e-10

    def test_matches_scipy(self, rng):
        taus = rng.integers(1, 700, size=40)
        params = WeibullParams(2.3, 150.0)
        expected = sps.weibull_min(c=2.3, scale=150.0).logpdf(taus).sum()
        assert weibull_loglik(taus.tolist(), params) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("shape", [0.5, 1.0, 2.0, 4.0])
    def test_density_normalization(self, shape):
        params = WeibullParams(shape, 120.0)
        total, _ = integrate.quad(
            lambda t: math.exp(weibull_logpdf(t, params)), 0, np.inf, limit=200
        )
        assert total == pytest.approx(1.0, abs=1e-6)


class TestFitWeibull:
    def test_simulation_recovery(self, rng):
        taus = 350.0 * rng.weibull(2.0, size=10_000)
        fit = fit_weibull(taus)
        assert abs(fit.shape - 2.0) / 2.0 < 0.03
        assert abs(fit.scale - 350.0) / 350.0 < 0.02

    def test_exponential_data_gives_unit_shape(self, rng):
        taus = rng.exponential(scale=100.0, size=10_000)
        fit = fit_weibull(taus)
        assert abs(fit.shape - 1.0) < 0.05

    def test_degenerate_input(self):
        with pytest.raises(DegenerateDataError):
            fit_weibull([100, 100])

    def test_too_few_points(self):
        with pytest.raises(FitError):
            fit_weibull([42])

    def test_matches_scipy_mle(self, rng):
        taus = 90.0 * rng.weibull(2.6, size=2_000)
        fit = fit_weibull(taus)
        c, _, scale = sps.weibull_min.fit(taus, floc=0)
        assert fit.shape == pytest.approx(c, rel=1e-4)
        assert fit.scale == pytest.approx(scale, rel=1e-4)

    def test_mle_optimality(self, rng):
        taus = 120.0 * rng.weibull(1.7, size=500)
        fit = fit_weibull(taus)
        best = weibull_loglik(taus.tolist(), fit)
        for dk in (0.99, 1.01):
            for dl in (0.99, 1.01):
                perturbed = WeibullParams(fit.shape * dk, fit.scale * dl)
                assert weibull_loglik(taus.tolist(), perturbed) <= best

    def test_consistency_with_sample_size(self, rng):
        true = WeibullParams(2.2, 200.0)
        errors = []
        for n in (100, 10_000):
            taus = true.scale * rng.weibull(true.shape, size=n)
            fit = fit_weibull(taus)
            errors.append(abs(fit.shape - true.shape) + abs(fit.scale - true.scale) / true.scale)
        assert errors[1] < errors[0]

    def test_integer_days_ok(self, rng):
        taus = np.maximum(1, np.rint(100.0 * rng.weibull(2.5, size=5_000))).astype(int)
        fit = fit_weibull(taus.tolist())
        assert abs(fit.shape - 2.5) / 2.5 < 0.05


class TestMeanInterval:
    def test_gamma_of_two(self):
        assert mean_interval(WeibullParams(1.0, 200.0)) == pytest.approx(200.0)

    def test_half_gamma(self):
        # 100 * gamma(1.5) = 100 * sqrt(pi)/2
        assert mean_interval(WeibullParams(2.0, 100.0)) == pytest.approx(
            88.62269254527581, rel=1e-12
        )
        assert mean_interval(WeibullParams(2.0, 100.0)) == pytest.approx(
            100 * math.sqrt(math.pi) / 2, rel=1e-12
        )

    def test_gamma_term_range_for_refill_shapes(self):
        # for k in [1.5, 3] the mean/scale ratio stays within [0.88, 0.91]
        for shape in np.linspace(1.5, 3.0, 151):
            ratio = mean_interval(WeibullParams(float(shape), 1.0))
            assert 0.88 < ratio < 0.91

    def test_params_validation(self):
        with pytest.raises(ValueError):
            WeibullParams(0.0, 100.0)
        with pytest.raises(ValueError):
            WeibullParams(2.0, math.inf)
        with pytest.raises(ValueError):
            ExpParams(-1.0)
