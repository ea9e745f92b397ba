"""Two-step quasi-ML estimation and one-step covariance forecasting.

Step 1 fits one GARCH(1,1) per tensor entry; Step 2 devolatilizes, targets
the per-mode intercepts, and maximises the correlation likelihood over the
2K recursion coefficients with the intercepts held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .correlation import (
    CorrParams,
    CorrState,
    CorrPath,
    Intercepts,
    corr_filter,
    corr_filter_last_state,
    corr_loglik,
    devolatilize,
    estimate_intercepts,
    fit_correlation,
)
from .errors import DegenerateSeriesError, ShapeError
from .garch import GarchFit, GarchParams, garch_filter, garch_fit, garch_loglik
from .model import TdccModel, assemble_sigma, kron_diag_gap
from .tensor import Dims, Tensor, TensorSeries

__all__ = [
    "VolatilityFit",
    "TdccFit",
    "Forecast",
    "fit_volatility",
    "two_step_fit",
    "filter_states",
    "advance_state",
    "forecast_one_step",
]


@dataclass
class VolatilityFit:
    """Step-1 output: per-entry parameters and the fitted variance paths."""

    params: tuple[GarchParams, ...]
    sigma2: np.ndarray = field(repr=False)  # (T, N)
    loglik: float
    converged: bool


@dataclass
class TdccFit:
    """Fitted model plus the in-sample states needed to roll it forward."""

    model: TdccModel
    sigma2: np.ndarray = field(repr=False)
    residuals: TensorSeries = field(repr=False)
    path: CorrPath | None = field(repr=False)
    last_state: CorrState
    loglik_volatility: float
    loglik_correlation: float
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def dims(self) -> Dims:
        return self.model.dims

    def sigma_path(self) -> list[np.ndarray]:
        """In-sample assembled covariance matrices, one per time point."""
        if self.path is None:
            raise ShapeError("state paths were not retained; refit with keep_paths=True")
        return [
            assemble_sigma(Tensor(self.dims, self.sigma2[t]), self.path.state(t))
            for t in range(len(self.residuals))
        ]


@dataclass
class Forecast:
    """One-step-ahead conditional moments."""

    sigma2_next: Tensor
    state_next: CorrState
    sigma_next: np.ndarray = field(repr=False)


def fit_volatility(x: TensorSeries) -> VolatilityFit:
    """Fit every entry's GARCH recursion separately (Step 1)."""
    t_len, n = x.values.shape
    params: list[GarchParams] = []
    sigma2 = np.empty((t_len, n))
    loglik = 0.0
    converged = True
    for i in range(n):
        try:
            fit: GarchFit = garch_fit(x.values[:, i])
        except DegenerateSeriesError as exc:
            raise DegenerateSeriesError(f"entry {i} (vec order): {exc}") from exc
        params.append(fit.params)
        sigma2[:, i] = fit.sigma2_path
        loglik += fit.loglik
        converged &= fit.converged
    return VolatilityFit(
        params=tuple(params), sigma2=sigma2, loglik=loglik, converged=converged
    )


def two_step_fit(
    x: TensorSeries,
    intercept_method: str = "sample",
    keep_paths: bool = True,
    volatility: VolatilityFit | None = None,
) -> TdccFit:
    """Full two-step fit of the model on a tensor series.

    ``volatility`` allows reusing an already-computed Step 1 (the per-entry
    problems depend only on the entry series, so e.g. a benchmark harness can
    share them across reshaped views of the same data).
    """
    x.require_finite()
    if len(x) < 50:
        raise ShapeError(f"need at least 50 observations for a two-step fit, got {len(x)}")
    vol = volatility if volatility is not None else fit_volatility(x)
    if vol.sigma2.shape != x.values.shape:
        raise ShapeError("volatility paths do not match the series shape")

    e = devolatilize(x, vol.sigma2)
    intercepts = estimate_intercepts(e, intercept_method)
    corr = fit_correlation(e, intercepts)

    if keep_paths:
        path = corr_filter(e, intercepts, corr.params)
        last_state = path.last()
    else:
        path = None
        last_state = corr_filter_last_state(e, intercepts, corr.params)
    model = TdccModel(dims=x.dims, garch=vol.params, intercepts=intercepts, corr=corr.params)
    gap = kron_diag_gap(Tensor(x.dims, vol.sigma2[-1]), last_state)
    diagnostics = {
        "volatility_converged": bool(vol.converged),
        "correlation_converged": bool(corr.converged),
        "correlation_nfev": corr.nfev,
        "intercept_method": intercept_method,
        "intercept_max_diag_gap": intercepts.max_diag_gap(),
        "separable_diag_gap": gap,
    }
    if intercepts.shrink_intensities is not None:
        diagnostics["shrink_intensities"] = list(intercepts.shrink_intensities)
    return TdccFit(
        model=model,
        sigma2=vol.sigma2,
        residuals=e,
        path=path,
        last_state=last_state,
        loglik_volatility=vol.loglik,
        loglik_correlation=corr.loglik,
        diagnostics=diagnostics,
    )


def filter_states(model: TdccModel, x: TensorSeries) -> TdccFit:
    """Run the fitted recursions over a series without re-estimating anything.

    Useful to extend state paths onto new data or to forecast from a stored
    model; volatility paths restart from each entry's sample variance.
    """
    x.require_finite()
    if x.dims != model.dims:
        raise ShapeError(f"series dims {x.dims} do not match model dims {model.dims}")
    t_len, n = x.values.shape
    sigma2 = np.empty((t_len, n))
    loglik_v = 0.0
    for i, params in enumerate(model.garch):
        init = float(np.var(x.values[:, i]))
        if not init > 0:
            raise DegenerateSeriesError(f"entry {i} (vec order) has zero variance")
        sigma2[:, i] = garch_filter(params, x.values[:, i], init)
        loglik_v += garch_loglik(params, x.values[:, i], init)
    e = devolatilize(x, sigma2)
    path = corr_filter(e, model.intercepts, model.corr)
    return TdccFit(
        model=model,
        sigma2=sigma2,
        residuals=e,
        path=path,
        last_state=path.last(),
        loglik_volatility=loglik_v,
        loglik_correlation=corr_loglik(e, path),
        diagnostics={"filtered_only": True},
    )


def advance_state(
    model: TdccModel,
    sigma2_last: np.ndarray,
    x_last: np.ndarray,
    state_last: CorrState,
) -> tuple[np.ndarray, CorrState]:
    """Advance the variance and quasi-correlation recursions one step.

    Consumes the time-T observation and state, returns the time-T+1 variance
    vector and correlation state.  Shared by forecasting and by rolling
    backtests that filter between refits.
    """
    omega = np.array([p.omega for p in model.garch])
    a = np.array([p.a for p in model.garch])
    b = np.array([p.b for p in model.garch])
    sigma2_next = omega + a * x_last**2 + b * sigma2_last

    e_last = TensorSeries(model.dims, (x_last / np.sqrt(sigma2_last))[None, :])
    q_next = []
    r_next = []
    for k in range(1, model.dims.order + 1):
        alpha = model.corr.alphas[k - 1]
        beta = model.corr.betas[k - 1]
        unf = e_last.unfold(k)[0]
        innov = (model.dims.size(k) / model.dims.total) * (unf @ unf.T)
        q = (
            (1.0 - alpha - beta) * model.intercepts.matrices[k - 1]
            + alpha * innov
            + beta * state_last.q[k - 1]
        )
        d = np.sqrt(np.diag(q))
        q_next.append(q)
        r_next.append(q / np.outer(d, d))
    return sigma2_next, CorrState(q=tuple(q_next), r=tuple(r_next))


def forecast_one_step(fit: TdccFit, x: TensorSeries) -> Forecast:
    """Assemble the one-step-ahead conditional covariance after the sample end."""
    if len(x) != len(fit.residuals):
        raise ShapeError("series length does not match the fitted paths")
    sigma2_next, state_next = advance_state(
        fit.model, fit.sigma2[-1], x.values[-1], fit.last_state
    )
    sigma2_tensor = Tensor(fit.dims, sigma2_next)
    return Forecast(
        sigma2_next=sigma2_tensor,
        state_next=state_next,
        sigma_next=assemble_sigma(sigma2_tensor, state_next),
    )
