"""Per-entry GARCH(1,1) filtering, quasi-ML fitting, and one-step forecasts.

Each tensor entry carries its own scalar recursion

    sigma2[t] = omega + a * x[t-1]**2 + b * sigma2[t-1],

filtered from ``sigma2[0] = sigma2_init``.  Fitting maximises the Gaussian
quasi-log-likelihood entry by entry; the stationarity margin a + b <= 1 - 1e-6
is enforced through a logistic reparameterisation so the simplex search is
unconstrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .errors import DegenerateSeriesError, FilterBreakdownError

__all__ = ["GarchParams", "GarchFit", "garch_filter", "garch_loglik", "garch_fit", "garch_forecast"]

STATIONARITY_MARGIN = 1e-6

# (a, b) multi-start grid; omega follows by variance targeting.
_FIT_STARTS = ((0.05, 0.90), (0.10, 0.80), (0.02, 0.95))


@dataclass(frozen=True)
class GarchParams:
    """Volatility recursion coefficients (omega, a, b)."""

    omega: float
    a: float
    b: float

    def __post_init__(self):
        if not (self.omega > 0):
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.a < 0 or self.b < 0:
            raise ValueError(f"a and b must be nonnegative, got a={self.a}, b={self.b}")

    @property
    def persistence(self) -> float:
        return self.a + self.b

    def unconditional_variance(self) -> float:
        if self.persistence >= 1.0:
            raise ValueError("unconditional variance undefined for a + b >= 1")
        return self.omega / (1.0 - self.persistence)


@dataclass
class GarchFit:
    """Result of a single-entry quasi-ML fit."""

    params: GarchParams
    sigma2_path: np.ndarray = field(repr=False)
    loglik: float
    converged: bool
    nfev: int = 0


def garch_filter(params: GarchParams, returns: np.ndarray, sigma2_init: float) -> np.ndarray:
    """Conditional variance path given parameters and an initial variance."""
    if not sigma2_init > 0:
        raise FilterBreakdownError(f"sigma2_init must be positive, got {sigma2_init}")
    returns = np.asarray(returns, dtype=float)
    t_len = returns.shape[0]
    path = np.empty(t_len)
    path[0] = sigma2_init
    if t_len > 1:
        # sigma2[t] = u[t] + b * sigma2[t-1] is an IIR filter in
        # u[t] = omega + a * x[t-1]**2.
        u = params.omega + params.a * returns[:-1] ** 2
        path[1:] = lfilter([1.0], [1.0, -params.b], u, zi=[params.b * sigma2_init])[0]
    return path


def garch_loglik(params: GarchParams, returns: np.ndarray, sigma2_init: float) -> float:
    """Gaussian quasi-log-likelihood -(1/2T) sum(log sigma2 + x^2 / sigma2)."""
    returns = np.asarray(returns, dtype=float)
    path = garch_filter(params, returns, sigma2_init)
    t_len = returns.shape[0]
    return float(-0.5 / t_len * (np.log(path).sum() + (returns**2 / path).sum()))


def garch_forecast(fit: GarchFit, last_return: float) -> float:
    """One-step variance forecast from the end of the fitted path."""
    p = fit.params
    return float(p.omega + p.a * last_return**2 + p.b * fit.sigma2_path[-1])


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def _sigmoid(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    w = math.exp(v)
    return w / (1.0 + w)


def _decode(z: np.ndarray) -> tuple[float, float, float]:
    """Map unconstrained coordinates to (omega, a, b) inside the feasible set."""
    omega = math.exp(min(z[0], 700.0))
    persistence = (1.0 - STATIONARITY_MARGIN) * _sigmoid(z[1])
    a = persistence * _sigmoid(z[2])
    return omega, a, persistence - a


def _encode(omega: float, a: float, b: float) -> np.ndarray:
    persistence = a + b
    return np.array(
        [
            np.log(omega),
            _logit(persistence / (1.0 - STATIONARITY_MARGIN)),
            _logit(a / persistence),
        ]
    )


def garch_fit(returns: np.ndarray, min_obs: int = 20) -> GarchFit:
    """Quasi-ML fit of (omega, a, b) for one entry series.

    Runs a Nelder-Mead search in the transformed 3-parameter space from three
    fixed starting points, with omega initialised by variance targeting.
    """
    returns = np.asarray(returns, dtype=float)
    t_len = returns.shape[0]
    if t_len < min_obs:
        raise DegenerateSeriesError(f"need at least {min_obs} observations, got {t_len}")
    sample_var = float(np.var(returns))
    if not sample_var > 0:
        raise DegenerateSeriesError("series has zero sample variance; entry is unfittable")

    x2 = returns**2

    def negloglik(z: np.ndarray) -> float:
        omega, a, b = _decode(z)
        if not np.isfinite(omega) or omega <= 0:
            return np.inf
        path = np.empty(t_len)
        path[0] = sample_var
        if t_len > 1:
            u = omega + a * x2[:-1]
            path[1:] = lfilter([1.0], [1.0, -b], u, zi=[b * sample_var])[0]
        value = 0.5 / t_len * (np.log(path).sum() + (x2 / path).sum())
        return value if np.isfinite(value) else np.inf

    best = None
    for a0, b0 in _FIT_STARTS:
        z0 = _encode(sample_var * (1.0 - a0 - b0), a0, b0)
        res = minimize(
            negloglik,
            z0,
            method="Nelder-Mead",
            options={"xatol": 1e-4, "fatol": 1e-8, "maxiter": 2000, "maxfev": 3000},
        )
        if best is None or res.fun < best.fun:
            best = res

    omega, a, b = _decode(best.x)
    params = GarchParams(omega, a, b)
    path = garch_filter(params, returns, sample_var)
    return GarchFit(
        params=params,
        sigma2_path=path,
        loglik=garch_loglik(params, returns, sample_var),
        converged=bool(best.success),
        nfev=int(best.nfev),
    )
