import numpy as np
import pytest

from tdcc.errors import DegenerateSeriesError, FilterBreakdownError
from tdcc.garch import (
    GarchFit,
    GarchParams,
    STATIONARITY_MARGIN,
    garch_filter,
    garch_fit,
    garch_forecast,
    garch_loglik,
)

TRUTH = GarchParams(0.4, 0.05, 0.9)


def simulate_garch(params, t_len, rng):
    x = np.empty(t_len)
    s = params.unconditional_variance()
    for t in range(t_len):
        x[t] = np.sqrt(s) * rng.standard_normal()
        s = params.omega + params.a * x[t] ** 2 + params.b * s
    return x


def loop_filter(params, returns, init):
    """Independent re-check of the recursion, one step at a time."""
    path = [init]
    for t in range(1, len(returns)):
        path.append(params.omega + params.a * returns[t - 1] ** 2 + params.b * path[-1])
    return np.array(path)


class TestFilter:
    def test_hand_recursion(self):
        path = garch_filter(TRUTH, np.array([1.0, 0.0]), 1.0)
        assert path.tolist() == [1.0, 1.35]

    def test_constant_variance_case(self):
        params = GarchParams(0.7, 0.0, 0.0)
        path = garch_filter(params, np.zeros(5), 1.0)
        assert path.tolist() == [1.0, 0.7, 0.7, 0.7, 0.7]

    def test_matches_independent_loop(self, rng):
        x = rng.normal(size=300)
        path = garch_filter(TRUTH, x, 2.0)
        assert np.abs(path - loop_filter(TRUTH, x, 2.0)).max() < 1e-12

    def test_positivity(self, rng):
        x = rng.normal(size=500) * 5
        assert garch_filter(TRUTH, x, 0.01).min() > 0

    def test_rejects_bad_init(self):
        with pytest.raises(FilterBreakdownError):
            garch_filter(TRUTH, np.ones(3), 0.0)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            GarchParams(0.0, 0.1, 0.5)
        with pytest.raises(ValueError):
            GarchParams(0.1, -0.1, 0.5)


class TestLoglik:
    def test_zero_returns_unit_variance(self):
        params = GarchParams(1.0, 0.0, 0.0)
        assert garch_loglik(params, np.zeros(10), 1.0) == 0.0

    def test_hand_value(self):
        # -(1/4) * [(log 1 + 1) + (log 1.35 + 0)]
        expected = -(1.0 + np.log(1.35)) / 4.0
        assert abs(garch_loglik(TRUTH, np.array([1.0, 0.0]), 1.0) - expected) < 1e-15
        assert abs(expected - (-0.32502614811258457)) < 1e-15

    def test_scale_shifts_omega_only(self, rng):
        x = simulate_garch(TRUTH, 3000, rng)
        base = garch_fit(x)
        scaled = garch_fit(2.0 * x)
        assert abs(scaled.params.omega / base.params.omega - 4.0) < 0.05
        assert abs(scaled.params.a - base.params.a) < 1e-3
        assert abs(scaled.params.b - base.params.b) < 1e-3


class TestFit:
    def test_consistency_improves_with_sample(self):
        errs = {500: [], 4000: []}
        for rep in range(50):
            rng = np.random.default_rng(1000 + rep)
            x = simulate_garch(TRUTH, 4000, rng)
            for t_len in errs:
                fit = garch_fit(x[:t_len])
                p = fit.params
                errs[t_len].append(
                    abs(p.omega - TRUTH.omega) + abs(p.a - TRUTH.a) + abs(p.b - TRUTH.b)
                )
        assert np.median(errs[4000]) < np.median(errs[500])

    def test_iid_data(self, rng):
        fit = garch_fit(rng.standard_normal(4000))
        assert fit.params.a < 0.02
        assert abs(fit.params.unconditional_variance() - 1.0) < 0.2

    def test_objective_not_worse_than_default_start(self, rng):
        x = simulate_garch(TRUTH, 800, rng)
        fit = garch_fit(x)
        start = GarchParams(np.var(x) * 0.05, 0.05, 0.90)
        assert fit.loglik >= garch_loglik(start, x, float(np.var(x))) - 1e-12

    def test_constraints_always_hold(self, rng):
        for _ in range(10):
            x = rng.standard_normal(200) * rng.uniform(0.5, 3.0)
            p = garch_fit(x).params
            assert p.omega > 0 and p.a >= 0 and p.b >= 0
            assert p.a + p.b <= 1.0 - STATIONARITY_MARGIN + 1e-15

    def test_self_consistency_on_own_simulation(self):
        rng = np.random.default_rng(7)
        x = simulate_garch(TRUTH, 8000, rng)
        first = garch_fit(x)
        y = simulate_garch(first.params, 8000, rng)
        refit = garch_fit(y)
        reference = garch_loglik(first.params, y, float(np.var(y)))
        assert refit.loglik >= reference - 1e-12
        assert abs(refit.loglik - reference) < 1e-3

    def test_short_series_rejected(self, rng):
        with pytest.raises(DegenerateSeriesError):
            garch_fit(rng.normal(size=10))

    def test_zero_variance_rejected(self):
        with pytest.raises(DegenerateSeriesError):
            garch_fit(np.ones(100))


class TestForecast:
    def test_constant_case(self):
        params = GarchParams(0.7, 0.0, 0.0)
        fit = GarchFit(params, np.array([1.0]), 0.0, True)
        assert garch_forecast(fit, 3.0) == 0.7

    def test_hand_continuation(self):
        path = garch_filter(TRUTH, np.array([1.0, 0.0]), 1.0)
        fit = GarchFit(TRUTH, path, 0.0, True)
        assert abs(garch_forecast(fit, 0.0) - 1.615) < 1e-12

    def test_forecast_mean_near_unconditional(self, rng):
        x = simulate_garch(TRUTH, 20000, rng)
        path = garch_filter(TRUTH, x, TRUTH.unconditional_variance())
        forecasts = TRUTH.omega + TRUTH.a * x**2 + TRUTH.b * path
        ratio = forecasts.mean() / TRUTH.unconditional_variance()
        assert abs(ratio - 1.0) < 0.15
