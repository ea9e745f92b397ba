import numpy as np
import pytest

from tdcc.baselines import fit_method
from tdcc.correlation import CorrParams, Intercepts, corr_filter, devolatilize
from tdcc.errors import ShapeError
from tdcc.estimation import (
    advance_state,
    filter_states,
    fit_volatility,
    forecast_one_step,
    two_step_fit,
)
from tdcc.garch import GarchParams
from tdcc.model import TdccModel, mode_variance_diag, trace_process
from tdcc.simulate import default_truth_model, make_rng, simulate_paths
from tdcc.tensor import Dims, Tensor, TensorSeries

from conftest import random_correlation


@pytest.fixture(scope="module")
def fitted(small_sim_module):
    truth, paths = small_sim_module
    return truth, paths, two_step_fit(paths.x)


@pytest.fixture(scope="module")
def small_sim_module():
    dims = Dims((2, 3))
    truth = default_truth_model(dims)
    return truth, simulate_paths(truth, 400, 200, make_rng(101))


class TestTwoStepFit:
    def test_diagnostics_and_shapes(self, fitted):
        truth, paths, fit = fitted
        assert fit.model.dims == paths.x.dims
        assert fit.sigma2.shape == paths.x.values.shape
        assert len(fit.model.garch) == 6
        assert fit.diagnostics["volatility_converged"]
        assert fit.diagnostics["correlation_converged"]
        assert 0 <= fit.diagnostics["intercept_max_diag_gap"] < 0.5

    def test_trace_equality_along_fitted_paths(self, fitted):
        truth, paths, fit = fitted
        for t in range(0, len(paths.x), 37):
            s2 = Tensor(fit.dims, fit.sigma2[t])
            y = trace_process(s2)
            for k in (1, 2):
                assert abs(mode_variance_diag(s2, k).sum() - y) < 1e-10 * max(y, 1.0)

    def test_stationarity_guards(self, fitted):
        _, _, fit = fitted
        for p in fit.model.garch:
            assert p.a + p.b <= 1 - 1e-6 + 1e-15
        for a, b in zip(fit.model.corr.alphas, fit.model.corr.betas):
            assert a + b <= 1 - 1e-6 + 1e-15

    def test_parameter_recovery_sane(self, fitted):
        truth, paths, fit = fitted
        # one pooled sample; loose sanity bands rather than consistency claims
        omegas = np.array([p.omega for p in fit.model.garch])
        bs = np.array([p.b for p in fit.model.garch])
        assert 0.05 < np.median(omegas) < 2.0
        assert np.median(bs) > 0.4

    def test_reuses_supplied_volatility(self, small_sim_module):
        truth, paths = small_sim_module
        vol = fit_volatility(paths.x)
        fit1 = two_step_fit(paths.x, volatility=vol)
        fit2 = two_step_fit(paths.x)
        assert fit1.model.corr == fit2.model.corr
        assert np.array_equal(fit1.sigma2, fit2.sigma2)

    def test_too_short_series(self, rng):
        x = TensorSeries(Dims((2,)), rng.normal(size=(30, 2)))
        with pytest.raises(ShapeError):
            two_step_fit(x)

    def test_self_consistency_per_observation(self, small_sim_module):
        truth, paths = small_sim_module
        fit = two_step_fit(paths.x)
        sim2 = simulate_paths(fit.model, 8000, 200, make_rng(3))
        refit = two_step_fit(sim2.x)
        ref_states = filter_states(fit.model, sim2.x)
        lt_refit = refit.loglik_volatility + refit.loglik_correlation
        lt_truth = ref_states.loglik_volatility + ref_states.loglik_correlation
        assert lt_refit >= lt_truth - 1e-6  # refit maximises the same objective
        assert abs(lt_refit - lt_truth) < 1e-2


class TestReduction:
    def test_k1_fit_equals_vdcc_adapter(self, rng):
        x = TensorSeries(Dims((3,)), rng.standard_normal((120, 3)))
        direct = two_step_fit(x)
        adapter = fit_method(x, "vdcc-s")
        assert direct.model.corr == adapter.fit.model.corr
        assert np.array_equal(direct.sigma2, adapter.fit.sigma2)
        for k in range(1):
            assert np.array_equal(direct.path.q[k], adapter.fit.path.q[k])
            assert np.array_equal(direct.path.r[k], adapter.fit.path.r[k])


class TestFilterStates:
    def test_matches_fit_paths_given_same_model(self, fitted):
        truth, paths, fit = fitted
        streamed = filter_states(fit.model, paths.x)
        assert np.abs(streamed.sigma2 - fit.sigma2).max() < 1e-12
        for k in range(2):
            assert np.abs(streamed.path.r[k] - fit.path.r[k]).max() < 1e-12

    def test_dims_mismatch(self, fitted, rng):
        _, _, fit = fitted
        with pytest.raises(ShapeError):
            filter_states(fit.model, TensorSeries(Dims((3,)), rng.normal(size=(60, 3))))


class TestForecast:
    def test_static_model_forecasts_intercept_structure(self, rng):
        # alpha=beta=0 and a=b=0: the forecast is diag(omega) scaled by the
        # correlation implied by the normalised intercepts
        dims = Dims((2, 2))
        omegas = np.array([0.5, 1.0, 1.5, 2.0])
        c1 = random_correlation(rng, 2)
        c2 = random_correlation(rng, 2)
        model = TdccModel(
            dims=dims,
            garch=tuple(GarchParams(w, 0.0, 0.0) for w in omegas),
            intercepts=Intercepts((c1, c2)),
            corr=CorrParams((0.0, 0.0), (0.0, 0.0)),
        )
        x = TensorSeries(dims, rng.standard_normal((80, 4)))
        states = filter_states(model, x)
        fc = forecast_one_step(states, x)
        assert np.abs(fc.sigma2_next.data - omegas).max() < 1e-12
        from tdcc.tensor import kron_chain

        vol = np.sqrt(omegas)
        expected = kron_chain([c1, c2]) * np.outer(vol, vol)
        assert np.abs(fc.sigma_next - expected).max() < 1e-12

    def test_filter_extension_oracle(self, small_sim_module):
        # the one-step forecast equals the in-sample state obtained by
        # refiltering T+1 points with identical parameters
        truth, paths = small_sim_module
        fit = two_step_fit(paths.x)
        extra = simulate_paths(truth, 1, 0, make_rng(999)).x.values
        extended = TensorSeries(paths.x.dims, np.vstack([paths.x.values, extra]))
        fc = forecast_one_step(fit, paths.x)
        refiltered = filter_states(fit.model, extended)
        # volatility paths share every in-sample value, so the last filtered
        # variance must equal the forecast
        assert np.abs(refiltered.sigma2[-1] - fc.sigma2_next.data).max() < 1e-10
        for k in range(2):
            assert np.abs(refiltered.path.r[k][-1] - fc.state_next.r[k]).max() < 1e-10

    def test_forecast_pd_sweep(self, rng):
        # many random valid models and short histories: Sigma stays PD
        for trial in range(200):
            sizes = tuple(rng.integers(1, 4, size=rng.integers(1, 4)))
            dims = Dims(sizes)
            n = dims.total
            garch = tuple(
                GarchParams(rng.uniform(0.05, 1.0), a, b)
                for a, b in zip(
                    rng.uniform(0, 0.15, n), rng.uniform(0.5, 0.8, n)
                )
            )
            model = TdccModel(
                dims=dims,
                garch=garch,
                intercepts=Intercepts(
                    tuple(random_correlation(rng, m) for m in sizes)
                ),
                corr=CorrParams(
                    tuple(rng.uniform(0, 0.1, dims.order)),
                    tuple(rng.uniform(0.6, 0.85, dims.order)),
                ),
            )
            x = TensorSeries(dims, rng.standard_normal((60, n)))
            fc = forecast_one_step(filter_states(model, x), x)
            eigs = np.linalg.eigvalsh(fc.sigma_next)
            assert eigs.min() > 0
            assert np.abs(fc.sigma_next - fc.sigma_next.T).max() < 1e-12

    def test_advance_matches_manual_recursion(self, fitted):
        truth, paths, fit = fitted
        x_last = paths.x.values[-1]
        sigma2_next, state_next = advance_state(
            fit.model, fit.sigma2[-1], x_last, fit.last_state
        )
        omega = np.array([p.omega for p in fit.model.garch])
        a = np.array([p.a for p in fit.model.garch])
        b = np.array([p.b for p in fit.model.garch])
        assert np.abs(
            sigma2_next - (omega + a * x_last**2 + b * fit.sigma2[-1])
        ).max() < 1e-14
        for k in range(2):
            assert abs(np.diag(state_next.r[k]) - 1.0).max() < 1e-12
