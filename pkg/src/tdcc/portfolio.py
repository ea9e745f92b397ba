"""Portfolio construction from forecast covariances and backtest evaluation.

Weight rules
------------
* minimum variance, unconstrained:  w = Sigma^-1 1 / (1' Sigma^-1 1)
* minimum variance, long-only:      argmin w' Sigma w  s.t.  w'1 = 1, w >= 0
* mean-variance, unconstrained:     argmax (w' mu) / (w' Sigma w)  s.t.  w'1 = 1
* mean-variance, long-only:         same objective over the probability simplex

The long-only problems are solved by a dense active-set method (exact
equality solves on the free set, Lawson-Hanson style feasibility steps,
most-negative entering rule with smallest-index tie break).  The ratio
problems use the stationarity family w ~ Sigma^-1 (mu - lambda 1): on the
hyperplane the stationary lambda has a closed form, which a safeguarded
one-dimensional sweep then confirms; on the simplex the ratio is maximised
by Dinkelbach iterations whose subproblems are convex QPs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .baselines import MethodSpec, fit_method
from .errors import NotPositiveDefiniteError, ShapeError, SolverError, TdccError
from .estimation import advance_state
from .model import assemble_sigma
from .tensor import Tensor, TensorSeries, series_unfold

__all__ = [
    "WeightResult",
    "BacktestReport",
    "minvar_unconstrained",
    "minvar_constrained",
    "meanvar_unconstrained",
    "meanvar_constrained",
    "evaluate",
    "rolling_backtest",
]

_KKT_TOL = 1e-8


@dataclass
class WeightResult:
    """Weights plus the solver's optimality evidence."""

    weights: np.ndarray
    objective: float
    kkt_residual: float = 0.0


def _chol(sigma: np.ndarray):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ShapeError(f"covariance must be square, got shape {sigma.shape}")
    try:
        return cho_factor(sigma, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"covariance is not positive definite: {exc}") from exc


def minvar_unconstrained(sigma: np.ndarray) -> WeightResult:
    """Closed-form minimum-variance weights on the budget hyperplane."""
    factor = _chol(sigma)
    ones = np.ones(sigma.shape[0])
    y = cho_solve(factor, ones)
    w = y / (ones @ y)
    return WeightResult(weights=w, objective=float(w @ sigma @ w))


def _solve_equality_qp(h: np.ndarray, g: np.ndarray, free: np.ndarray):
    """min (1/2) w'Hw + g'w s.t. sum(w) = 1 with non-free entries pinned at 0."""
    hff = h[np.ix_(free, free)]
    factor = cho_factor(hff, lower=True)
    ones = np.ones(free.size)
    inv_ones = cho_solve(factor, ones)
    inv_g = cho_solve(factor, g[free])
    lam = (1.0 + ones @ inv_g) / (ones @ inv_ones)
    w_free = lam * inv_ones - inv_g
    return w_free, float(lam)


def _simplex_qp(h: np.ndarray, g: np.ndarray, max_iter: int | None = None) -> WeightResult:
    """min (1/2) w'Hw + g'w over the probability simplex (H PD), active set.

    Maintains a feasible iterate; on sign violation it steps toward the
    equality solution only as far as feasibility allows, dropping the first
    variable to hit zero, so the objective decreases monotonically.
    """
    n = h.shape[0]
    if max_iter is None:
        max_iter = 6 * n + 30
    w = np.full(n, 1.0 / n)
    free = np.ones(n, dtype=bool)
    lam = 0.0
    for _ in range(max_iter):
        idx = np.flatnonzero(free)
        w_free, lam = _solve_equality_qp(h, g, idx)
        if w_free.min() >= -1e-13:
            w = np.zeros(n)
            w[idx] = np.clip(w_free, 0.0, None)
            # dual feasibility on the pinned set; most negative enters first
            grad = h @ w + g
            slack = grad - lam
            slack[free] = 0.0
            entering = int(np.argmin(slack))
            if slack[entering] >= -_KKT_TOL:
                residual = _simplex_kkt_residual(h, g, w, lam)
                return WeightResult(weights=w, objective=float(0.5 * w @ h @ w + g @ w),
                                    kkt_residual=residual)
            free[entering] = True
            continue
        # feasibility step: move toward the equality solution, drop blockers
        target = np.zeros(n)
        target[idx] = w_free
        delta = target - w
        blocking = idx[w_free < -1e-13]
        with np.errstate(divide="ignore", invalid="ignore"):
            steps = w[blocking] / (w[blocking] - target[blocking])
        theta = float(np.min(steps))
        w = np.clip(w + theta * delta, 0.0, None)
        w[blocking[steps <= theta + 1e-15]] = 0.0
        free = w > 0.0
        if not free.any():
            raise SolverError("active-set lost all free variables")
        w = w / w.sum()
    raise SolverError(f"active-set did not converge within {max_iter} iterations")


def _simplex_kkt_residual(h: np.ndarray, g: np.ndarray, w: np.ndarray, lam: float) -> float:
    grad = h @ w + g
    stationarity = float(np.abs(grad[w > 0] - lam).max()) if (w > 0).any() else 0.0
    dual = float(max(0.0, (lam - grad[w <= 0]).max())) if (w <= 0).any() else 0.0
    primal = abs(float(w.sum()) - 1.0)
    return max(stationarity, dual, primal, float(max(0.0, -w.min())))


def minvar_constrained(sigma: np.ndarray) -> WeightResult:
    """Long-only minimum-variance weights via the active-set solver."""
    sigma = np.asarray(sigma, dtype=float)
    _chol(sigma)  # PD gate with a clear error
    res = _simplex_qp(2.0 * sigma, np.zeros(sigma.shape[0]))
    if res.kkt_residual >= _KKT_TOL:
        raise SolverError(f"KKT residual {res.kkt_residual:.2e} exceeds {_KKT_TOL}")
    return WeightResult(
        weights=res.weights,
        objective=float(res.weights @ sigma @ res.weights),
        kkt_residual=res.kkt_residual,
    )


def _ratio(w: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> float:
    return float((w @ mu) / (w @ sigma @ w))


def meanvar_unconstrained(mu: np.ndarray, sigma: np.ndarray) -> WeightResult:
    """Maximise (w'mu)/(w'Sigma w) subject to w'1 = 1.

    Stationary points lie on w(lambda) ~ Sigma^-1 (mu - lambda 1) with
    lambda^2 = (mu'Sigma^-1 mu)/(1'Sigma^-1 1); both roots are evaluated and
    a bracketed sweep around the winner guards against numerical edge cases.
    """
    mu = np.asarray(mu, dtype=float)
    factor = _chol(sigma)
    n = sigma.shape[0]
    if mu.shape != (n,):
        raise ShapeError(f"mu has shape {mu.shape}, expected ({n},)")
    if not np.any(mu):
        raise ShapeError("mu is identically zero; the ratio objective is undefined")
    ones = np.ones(n)
    inv_ones = cho_solve(factor, ones)
    inv_mu = cho_solve(factor, mu)
    a_val = float(ones @ inv_ones)
    b_val = float(ones @ inv_mu)
    c_val = float(mu @ inv_mu)
    # mu collinear with 1 leaves only the variance to optimise
    if a_val * c_val - b_val**2 <= 1e-14 * max(a_val * c_val, 1.0):
        w = inv_ones / a_val
        return WeightResult(weights=w, objective=_ratio(w, mu, sigma))

    def weights_at(lam: float) -> np.ndarray | None:
        denom = b_val - lam * a_val
        if abs(denom) < 1e-14 * max(abs(b_val), abs(lam * a_val), 1.0):
            return None
        return (inv_mu - lam * inv_ones) / denom

    root = float(np.sqrt(c_val / a_val))
    best_w, best_f, best_lam = None, -np.inf, -root
    for lam in (-root, root):
        w = weights_at(lam)
        if w is not None:
            f = _ratio(w, mu, sigma)
            if f > best_f:
                best_w, best_f, best_lam = w, f, lam
    if best_w is None:
        raise SolverError("both stationary candidates hit the normalisation pole")
    # safeguarded sweep around the analytic winner
    for lam in np.linspace(best_lam - 0.5 * root, best_lam + 0.5 * root, 41):
        w = weights_at(float(lam))
        if w is not None:
            f = _ratio(w, mu, sigma)
            if f > best_f:
                best_w, best_f = w, f
    # first-order check: the hyperplane-projected ratio gradient vanishes
    grad = mu - 2.0 * best_f * (sigma @ best_w)
    residual = float(np.abs(grad - grad.mean()).max())
    scale = max(float(np.abs(mu).max()), 1.0)
    return WeightResult(weights=best_w, objective=best_f, kkt_residual=residual / scale)


def meanvar_constrained(mu: np.ndarray, sigma: np.ndarray) -> WeightResult:
    """Maximise the mean-variance ratio over the probability simplex.

    Dinkelbach iterations: each step solves the convex QP
    max w'mu - tau w'Sigma w over the simplex at the current ratio tau, which
    converges to the global optimum whenever the optimal ratio is positive
    (guaranteed as soon as any mu_i > 0).  Vertices and the projected
    unconstrained solution seed the search and serve as a floor.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    _chol(sigma)
    n = sigma.shape[0]
    if mu.shape != (n,):
        raise ShapeError(f"mu has shape {mu.shape}, expected ({n},)")
    if not np.any(mu):
        raise ShapeError("mu is identically zero; the ratio objective is undefined")

    candidates = [np.eye(n)[i] for i in range(n)]
    try:
        candidates.append(_project_simplex(meanvar_unconstrained(mu, sigma).weights))
    except TdccError:
        pass
    candidates.append(np.full(n, 1.0 / n))
    best_w = max(candidates, key=lambda w: _ratio(w, mu, sigma))
    best_f = _ratio(best_w, mu, sigma)

    residual = None
    if best_f > 0:
        for _ in range(100):
            qp = _simplex_qp(2.0 * best_f * sigma, -mu)
            f_new = _ratio(qp.weights, mu, sigma)
            if f_new <= best_f * (1.0 + 1e-13):
                residual = _simplex_kkt_residual(
                    2.0 * best_f * sigma, -mu, qp.weights, _qp_lambda(2.0 * best_f * sigma, -mu, qp.weights)
                )
                best_w = qp.weights if f_new >= best_f else best_w
                best_f = max(best_f, f_new)
                break
            best_w, best_f = qp.weights, f_new
        else:
            raise SolverError("Dinkelbach iteration did not converge")
    else:
        best_w, best_f = _projected_gradient_ratio(mu, sigma, best_w)
        residual = _simplex_kkt_residual(
            2.0 * max(best_f, 0.0) * sigma, -mu, best_w, _qp_lambda(2.0 * max(best_f, 0.0) * sigma, -mu, best_w)
        )
    scale = max(float(np.abs(mu).max()), 1.0)
    return WeightResult(weights=best_w, objective=best_f, kkt_residual=residual / scale)


def _qp_lambda(h: np.ndarray, g: np.ndarray, w: np.ndarray) -> float:
    grad = h @ w + g
    support = w > 0
    return float(grad[support].mean()) if support.any() else 0.0


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.flatnonzero(u * np.arange(1, v.size + 1) > css)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.clip(v - theta, 0.0, None)


def _projected_gradient_ratio(
    mu: np.ndarray, sigma: np.ndarray, w0: np.ndarray, iters: int = 500
) -> tuple[np.ndarray, float]:
    """Best-effort ascent used only when the optimal ratio is nonpositive."""
    w = w0.copy()
    f = _ratio(w, mu, sigma)
    step = 1.0
    for _ in range(iters):
        d = float(w @ sigma @ w)
        grad = (mu - 2.0 * f * (sigma @ w)) / d
        improved = False
        for _ in range(30):
            w_new = _project_simplex(w + step * grad)
            f_new = _ratio(w_new, mu, sigma)
            if f_new > f + 1e-15:
                w, f = w_new, f_new
                step *= 1.5
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return w, f


@dataclass
class BacktestReport:
    """Realised out-of-sample performance of one weight rule."""

    weights: np.ndarray = field(repr=False)  # (T_test, N) in source vec order
    portfolio_returns: np.ndarray = field(repr=False)  # (T_test,)
    av: float
    sd: float
    ir: float
    periods_per_year: float
    degenerate: bool = False
    fallbacks: int = 0
    config: dict[str, Any] = field(default_factory=dict)
    dates: list[str] | None = None


def evaluate(
    realized: np.ndarray, weights: np.ndarray, periods_per_year: float = 252.0
) -> BacktestReport:
    """Annualised average return, volatility, and information ratio.

    AV is the per-period mean scaled by ``periods_per_year``; SD uses the
    (T-1) divisor and scales by its square root.  A constant return series
    has SD exactly zero, in which case IR is undefined and flagged.
    """
    realized = np.atleast_2d(np.asarray(realized, dtype=float))
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    if realized.shape != weights.shape:
        raise ShapeError(
            f"realized returns {realized.shape} and weights {weights.shape} must align"
        )
    if realized.shape[0] < 2:
        raise ShapeError("need at least 2 test points to evaluate")
    port = (realized * weights).sum(axis=1)
    av = periods_per_year * float(port.mean())
    sd = float(np.sqrt(periods_per_year) * port.std(ddof=1))
    degenerate = sd == 0.0
    ir = float("nan") if degenerate else av / sd
    return BacktestReport(
        weights=weights,
        portfolio_returns=port,
        av=av,
        sd=sd,
        ir=ir,
        periods_per_year=periods_per_year,
        degenerate=degenerate,
    )


def _compute_weights(
    objective: str, constrained: bool, sigma: np.ndarray, mu: np.ndarray | None
) -> np.ndarray:
    if objective == "minvar":
        rule = minvar_constrained if constrained else minvar_unconstrained
        return rule(sigma).weights
    if objective == "meanvar":
        if mu is None:
            raise ShapeError("mean-variance weights need a mean forecast")
        rule = meanvar_constrained if constrained else meanvar_unconstrained
        return rule(mu, sigma).weights
    raise ValueError(f"unknown objective {objective!r}; use 'minvar' or 'meanvar'")


def mode_weight_profile(weights: np.ndarray, series: TensorSeries) -> list[np.ndarray]:
    """Aggregate a weight vector by mode level: entry sums per index of each mode."""
    row = np.asarray(weights, dtype=float)[None, :]
    return [
        series_unfold(row, series.dims, k)[0].sum(axis=1)
        for k in range(1, series.dims.order + 1)
    ]


def rolling_backtest(
    x: TensorSeries,
    method: MethodSpec | str,
    train_window: int,
    objective: str = "minvar",
    constrained: bool = False,
    stride: int = 1,
    periods_per_year: float = 252.0,
    demean: bool = True,
    mu_series: np.ndarray | None = None,
) -> BacktestReport:
    """Walk-forward covariance forecasting and portfolio construction.

    At each test point the model is refit on the latest ``train_window``
    observations every ``stride`` points; between refits the fitted
    recursions are advanced with the incoming observations.  Failures at a
    test point fall back to the previous weights (equal weights at the first
    point) and are counted in the report.
    """
    if isinstance(method, str):
        method = MethodSpec.parse(method)
    t_total = len(x)
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if train_window + 1 > t_total:
        raise ShapeError(
            f"train window {train_window} leaves no test points out of {t_total}"
        )
    n = x.dims.total
    t_test = t_total - train_window
    if mu_series is not None:
        mu_series = np.asarray(mu_series, dtype=float)
        if mu_series.shape != (t_test, n):
            raise ShapeError(f"mu_series must have shape ({t_test}, {n})")

    weights = np.empty((t_test, n))
    realized = np.empty(t_test)
    prev_w = np.full(n, 1.0 / n)
    fallbacks = 0

    mfit = None
    window_mean = np.zeros(n)
    sigma2_cur = state_cur = None

    for j in range(t_test):
        t0 = train_window + j
        try:
            if j % stride == 0:
                window = TensorSeries(x.dims, x.values[t0 - train_window : t0])
                window_mean = window.values.mean(axis=0) if demean else np.zeros(n)
                centered = TensorSeries(x.dims, window.values - window_mean)
                mfit = fit_method(centered, method, keep_paths=False)
                adapted_last = centered.values[-1][mfit.perm]
                sigma2_cur, state_cur = advance_state(
                    mfit.fit.model, mfit.fit.sigma2[-1], adapted_last, mfit.fit.last_state
                )
            else:
                if mfit is None:
                    raise SolverError("no fitted model available from the last refit")
                adapted_last = (x.values[t0 - 1] - window_mean)[mfit.perm]
                sigma2_cur, state_cur = advance_state(
                    mfit.fit.model, sigma2_cur, adapted_last, state_cur
                )
            sigma_hat = assemble_sigma(Tensor(mfit.fit.dims, sigma2_cur), state_cur)
            sigma_hat = mfit.sigma_in_source_order(sigma_hat)
            if objective == "meanvar":
                mu = (
                    mu_series[j]
                    if mu_series is not None
                    else x.values[t0 - train_window : t0].mean(axis=0)
                )
            else:
                mu = None
            w = _compute_weights(objective, constrained, sigma_hat, mu)
        except (TdccError, np.linalg.LinAlgError):
            w = prev_w
            fallbacks += 1
        weights[j] = w
        realized[j] = float(w @ x.values[t0])
        prev_w = w

    report = evaluate(x.values[train_window:], weights, periods_per_year)
    report.fallbacks = fallbacks
    report.config = {
        "method": method.name,
        "train_window": train_window,
        "objective": objective,
        "constrained": constrained,
        "stride": stride,
        "periods_per_year": periods_per_year,
        "demean": demean,
        "n_test": t_test,
    }
    return report
