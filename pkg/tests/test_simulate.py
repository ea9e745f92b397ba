import numpy as np
import pytest

from tdcc.errors import NotPositiveDefiniteError, ShapeError
from tdcc.simulate import (
    ExperimentConfig,
    SimConfig,
    default_truth_model,
    loss,
    make_rng,
    run_experiment,
    sample_standard_tensor_normal,
    simulate_paths,
    simulate_tdcc,
)
from tdcc.tensor import Dims, kron_chain, sym_sqrt

from conftest import random_spd


class TestTensorNormal:
    def test_mean_within_clt_band(self):
        rng = make_rng(1)
        dims = Dims((10, 10))
        draws = np.concatenate(
            [sample_standard_tensor_normal(dims, rng).data for _ in range(10_000)]
        )
        assert abs(draws.mean()) < 4.0 / np.sqrt(draws.size)

    def test_vec_covariance_near_identity(self):
        rng = make_rng(2)
        dims = Dims((2, 2, 2))
        x = np.stack(
            [sample_standard_tensor_normal(dims, rng).data for _ in range(100_000)]
        )
        cov = x.T @ x / len(x)
        off = cov - np.diag(np.diag(cov))
        assert np.abs(off).max() < 0.05
        assert np.abs(np.diag(cov) - 1.0).max() < 0.05

    def test_fixed_seed_bit_identical(self):
        dims = Dims((3, 2))
        a = sample_standard_tensor_normal(dims, make_rng(77)).data
        b = sample_standard_tensor_normal(dims, make_rng(77)).data
        assert np.array_equal(a, b)


class TestSimulate:
    def test_degenerate_model_gives_iid_normals(self):
        dims = Dims((2, 2))
        model = default_truth_model(
            dims, c_spread=0.0, garch=(1.0, 0.0, 0.0), corr=(0.0, 0.0)
        )
        x = simulate_tdcc(SimConfig(model=model, horizon=30_000, seed=5, burn_in=10))
        vals = x.values
        assert abs(vals.mean()) < 0.02
        cov = vals.T @ vals / len(vals)
        assert np.abs(cov - np.eye(4)).max() < 0.05

    def test_entry_variances_match_unconditional(self):
        dims = Dims((2, 2))
        truth = default_truth_model(dims)
        paths = simulate_paths(truth, 100_000, 200, make_rng(9))
        ratio = paths.x.values.var(axis=0) / truth.unconditional_variances()
        assert np.all(np.abs(ratio - 1.0) < 0.10)

    def test_trace_identity_of_true_factors(self):
        dims = Dims((2, 3, 2))
        truth = default_truth_model(dims)
        paths = simulate_paths(truth, 50, 100, make_rng(4))
        for t in range(50):
            for k in range(1, 3):
                u = paths.u_roots[k][t] @ paths.u_roots[k][t]
                assert abs(np.trace(u) - 1.0) < 1e-10

    def test_determinism(self):
        dims = Dims((2, 2))
        truth = default_truth_model(dims)
        a = simulate_paths(truth, 50, 20, make_rng(123)).x.values
        b = simulate_paths(truth, 50, 20, make_rng(123)).x.values
        assert np.array_equal(a, b)

    def test_config_validation(self):
        truth = default_truth_model(Dims((2,)))
        with pytest.raises(ValueError):
            SimConfig(model=truth, horizon=0, seed=1)


class TestLoss:
    def test_identity_case(self):
        assert loss(np.eye(4), np.eye(4)) == 0.0

    def test_zero_at_truth_and_scale_invariant(self, rng):
        for n in (3, 8, 20):
            for _ in range(5):
                s = random_spd(rng, n)
                assert abs(loss(s, s)) < 1e-10
                h = random_spd(rng, n)
                assert abs(loss(3.7 * h, s) - loss(h, s)) < 1e-10

    def test_double_identity_hand_case(self):
        for n in (2, 5):
            assert abs(loss(2.0 * np.eye(n), np.eye(n))) < 1e-14

    def test_truth_minimises_over_perturbations(self, rng):
        s = random_spd(rng, 3)
        base = loss(s, s)
        for _ in range(25):
            direction = rng.normal(size=(3, 3))
            direction = direction + direction.T
            for eps in (0.05, 0.2):
                h = s + eps * direction
                if np.linalg.eigvalsh(h).min() > 1e-6:
                    assert loss(h, s) >= base - 1e-12

    def test_rejects_non_pd(self):
        with pytest.raises(NotPositiveDefiniteError):
            loss(np.diag([1.0, -1.0]), np.eye(2))

    def test_streaming_kronecker_loss_matches_dense(self, rng):
        from tdcc.simulate import _loss_against_truth

        dims = Dims((2, 3, 2))
        factors = [random_spd(rng, n, jitter=0.3) for n in dims.sizes]
        roots = [sym_sqrt(u) for u in factors]
        sigma_true = kron_chain(factors)
        sigma_hat = random_spd(rng, dims.total, jitter=0.4)
        direct = loss(sigma_hat, sigma_true)
        streamed = _loss_against_truth(sigma_hat, roots, dims)
        assert abs(direct - streamed) < 1e-10


class TestExperiment:
    def test_deterministic_and_worker_invariant(self):
        cfg = ExperimentConfig(
            dims=Dims((2, 2)),
            horizons=(60,),
            methods=("tdcc-s",),
            replications=3,
            seed=31,
            burn_in=40,
        )
        first = run_experiment(cfg)
        second = run_experiment(cfg)
        assert first.cells[0].losses == second.cells[0].losses
        parallel = run_experiment(
            ExperimentConfig(
                dims=Dims((2, 2)),
                horizons=(60,),
                methods=("tdcc-s",),
                replications=3,
                seed=31,
                burn_in=40,
                workers=2,
            )
        )
        assert parallel.cells[0].losses == first.cells[0].losses

    def test_nls_substitution_recorded(self):
        cfg = ExperimentConfig(
            dims=Dims((2, 2)),
            horizons=(60,),
            methods=("tdcc-nls",),
            replications=1,
            seed=8,
            burn_in=40,
        )
        report = run_experiment(cfg)
        assert report.substitutions == {"tdcc-nls": "tdcc-ls"}
        assert report.cells[0].method == "tdcc-ls"
        assert report.cells[0].n_completed == 1

    def test_mdcc_mode_checked_against_dims(self):
        with pytest.raises(ShapeError):
            ExperimentConfig(
                dims=Dims((2, 2)),
                horizons=(60,),
                methods=("mdcc3-s",),
                replications=1,
                seed=1,
            )

    def test_cell_statistics(self):
        from tdcc.simulate import CellResult

        cell = CellResult(method="m", horizon=10, losses=[1.0, None, 3.0])
        assert cell.n_completed == 2
        assert cell.mean_loss == 2.0
        assert abs(cell.sd_loss - np.std([1.0, 3.0], ddof=1)) < 1e-15
