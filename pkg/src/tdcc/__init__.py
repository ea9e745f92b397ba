"""Tensor dynamic conditional correlation modelling.

Library for simulating, estimating, and forecasting the conditional
covariance of tensor-valued return series, with mode-wise correlation
dynamics on top of per-entry GARCH volatilities, plus a replication
experiment harness and a rolling portfolio backtester.
"""

from .baselines import METHOD_NAMES, MethodSpec, fit_method, unfold_adapter, vectorize_adapter
from .correlation import (
    CorrParams,
    CorrPath,
    CorrState,
    Intercepts,
    corr_filter,
    corr_loglik,
    devolatilize,
    estimate_intercepts,
    fit_correlation,
)
from .datasets import load_dataset, save_dataset
from .errors import TdccError
from .estimation import (
    Forecast,
    TdccFit,
    VolatilityFit,
    filter_states,
    fit_volatility,
    forecast_one_step,
    two_step_fit,
)
from .garch import GarchFit, GarchParams, garch_filter, garch_fit, garch_forecast, garch_loglik
from .model import (
    TdccModel,
    assemble_sigma,
    identified_scale_matrix,
    mode_covariance,
    mode_variance_diag,
    model_from_json,
    model_to_json,
    trace_process,
)
from .portfolio import (
    BacktestReport,
    evaluate,
    meanvar_constrained,
    meanvar_unconstrained,
    minvar_constrained,
    minvar_unconstrained,
    rolling_backtest,
)
from .shrinkage import ShrinkResult, linear_shrink
from .simulate import (
    ExperimentConfig,
    ExperimentReport,
    SimConfig,
    default_truth_model,
    loss,
    run_experiment,
    sample_standard_tensor_normal,
    simulate_tdcc,
)
from .tensor import Dims, Tensor, TensorSeries, kron_chain, mat_k, mode_k_product, sym_sqrt, vec

__version__ = "0.1.0"
