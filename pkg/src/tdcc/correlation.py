"""Mode-wise conditional correlation dynamics and their quasi-ML fit.

The devolatilized series drives, for every mode k, a quasi-correlation
recursion

    Q_k[t] = (1 - alpha_k - beta_k) C_k
             + alpha_k * (N_k / N) * mat_k(E[t-1]) mat_k(E[t-1])'
             + beta_k * Q_k[t-1],

whose diagonal rescaling R_k[t] = diag(Q_k[t])^{-1/2} Q_k[t] diag(Q_k[t])^{-1/2}
is the mode-k conditional correlation matrix.  The factor N_k / N is the
dimension normalisation that makes the conditional expectation of the scaled
outer product a correlation matrix; it is 1 only for vector data.

The correlation likelihood is evaluated without ever forming an N x N matrix:
the Kronecker quadratic form is an inner product with a sequence of mode-wise
solves, and all per-time work is batched over bounded time chunks so memory
stays flat even when one mode is large.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.special import expit

from .errors import (
    FilterBreakdownError,
    NotPositiveDefiniteError,
    ShapeError,
    UnimplementedMethodError,
)
from .shrinkage import linear_shrink
from .tensor import Dims, TensorSeries, series_fold, series_unfold, symmetrize

__all__ = [
    "CorrParams",
    "Intercepts",
    "CorrState",
    "CorrPath",
    "CorrFit",
    "devolatilize",
    "estimate_intercepts",
    "corr_filter",
    "iter_corr_filter",
    "corr_filter_last_state",
    "corr_loglik",
    "fit_correlation",
    "INTERCEPT_METHODS",
]

STATIONARITY_MARGIN = 1e-6
INTERCEPT_METHODS = ("sample", "linear_shrinkage", "nonlinear_shrinkage")

# Diagonal entries of a targeting intercept should hover near 1; values far
# outside this band usually mean mis-scaled volatilities upstream.
_DIAG_SANITY_BAND = (0.5, 2.0)

_CHUNK_BUDGET = 1 << 23  # floats per (chunk, N_k, N_k) work array


@dataclass(frozen=True)
class CorrParams:
    """Per-mode recursion coefficients (alpha_k, beta_k)."""

    alphas: tuple[float, ...]
    betas: tuple[float, ...]

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        betas = tuple(float(b) for b in self.betas)
        if len(alphas) != len(betas):
            raise ShapeError("alphas and betas must have one entry per mode")
        for k, (a, b) in enumerate(zip(alphas, betas), start=1):
            if a < 0 or b < 0 or a + b >= 1:
                raise ValueError(
                    f"mode {k}: need alpha >= 0, beta >= 0, alpha + beta < 1, got ({a}, {b})"
                )
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "betas", betas)

    @property
    def order(self) -> int:
        return len(self.alphas)


@dataclass
class Intercepts:
    """Per-mode targeting intercept matrices C_k."""

    matrices: tuple[np.ndarray, ...]
    shrink_intensities: tuple[float, ...] | None = None

    def __post_init__(self):
        mats = []
        for k, c in enumerate(self.matrices, start=1):
            c = symmetrize(np.asarray(c, dtype=float))
            vals = np.linalg.eigvalsh(c)
            if vals[0] < -1e-10 * max(vals[-1], 1e-300):
                raise NotPositiveDefiniteError(f"intercept for mode {k} is not PSD")
            diag = np.diag(c)
            lo, hi = _DIAG_SANITY_BAND
            if diag.min() < lo or diag.max() > hi:
                warnings.warn(
                    f"mode-{k} intercept diagonal outside [{lo}, {hi}] "
                    f"(range [{diag.min():.3g}, {diag.max():.3g}]); "
                    "check volatility scaling",
                    RuntimeWarning,
                    stacklevel=2,
                )
            mats.append(c)
        self.matrices = tuple(mats)

    @property
    def order(self) -> int:
        return len(self.matrices)

    def max_diag_gap(self) -> float:
        """Diagnostic: max |diag(C_k) - 1| across modes."""
        return max(float(np.abs(np.diag(c) - 1.0).max()) for c in self.matrices)


@dataclass(frozen=True)
class CorrState:
    """Per-mode quasi-correlation and correlation matrices at one time."""

    q: tuple[np.ndarray, ...]
    r: tuple[np.ndarray, ...]


@dataclass
class CorrPath:
    """Filtered per-mode state paths; arrays are (T, N_k, N_k) per mode."""

    q: tuple[np.ndarray, ...] = field(repr=False)
    r: tuple[np.ndarray, ...] = field(repr=False)

    def __len__(self) -> int:
        return self.q[0].shape[0]

    def state(self, t: int) -> CorrState:
        return CorrState(
            q=tuple(q[t].copy() for q in self.q),
            r=tuple(r[t].copy() for r in self.r),
        )

    def last(self) -> CorrState:
        return self.state(len(self) - 1)


@dataclass
class CorrFit:
    """Outcome of the correlation-stage optimisation."""

    params: CorrParams
    loglik: float
    converged: bool
    nfev: int
    message: str = ""


def devolatilize(x: TensorSeries, sigma2: np.ndarray) -> TensorSeries:
    """Divide every entry by its conditional standard deviation."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma2.shape != x.values.shape:
        raise ShapeError(
            f"sigma2 shape {sigma2.shape} does not match series shape {x.values.shape}"
        )
    if not np.all(sigma2 > 0) or not np.all(np.isfinite(sigma2)):
        raise FilterBreakdownError("conditional variances must be finite and positive")
    return TensorSeries(x.dims, x.values / np.sqrt(sigma2))


def estimate_intercepts(e: TensorSeries, method: str = "sample") -> Intercepts:
    """Targeting estimate of the intercepts C_k from devolatilized data.

    ``sample`` uses the dimension-normalised moment estimate
    (1/T) sum_t (N_k/N) mat_k(E_t) mat_k(E_t)'.  ``linear_shrinkage`` applies
    linear shrinkage over the T * N_{-k} unfolding columns, which average to
    exactly the sample estimate.
    """
    if method not in INTERCEPT_METHODS:
        raise ValueError(f"unknown intercept method {method!r}; use one of {INTERCEPT_METHODS}")
    if method == "nonlinear_shrinkage":
        raise UnimplementedMethodError(
            "nonlinear shrinkage intercepts are reserved but not implemented; use "
            "'sample' or 'linear_shrinkage'"
        )
    t_len = len(e)
    dims = e.dims
    mats = []
    intensities = []
    for k in range(1, dims.order + 1):
        unf = e.unfold(k)
        if method == "sample":
            c = np.einsum("tij,tkj->ik", unf, unf) * (dims.size(k) / (dims.total * t_len))
            mats.append(symmetrize(c))
        else:
            columns = unf.transpose(0, 2, 1).reshape(-1, dims.size(k))
            res = linear_shrink(columns)
            mats.append(res.matrix)
            intensities.append(res.intensity)
    return Intercepts(
        matrices=tuple(mats),
        shrink_intensities=tuple(intensities) if intensities else None,
    )


def _default_chunk(t_len: int, dims: Dims) -> int:
    widest = max(dims.sizes)
    return max(8, min(t_len, _CHUNK_BUDGET // (widest * widest)))


def _resolve_q_init(
    intercepts: Intercepts, q_init: tuple[np.ndarray, ...] | None, dims: Dims
) -> list[np.ndarray]:
    if q_init is None:
        return [c.copy() for c in intercepts.matrices]
    inits = []
    for k, q in enumerate(q_init, start=1):
        q = symmetrize(np.asarray(q, dtype=float))
        if q.shape != (dims.size(k), dims.size(k)):
            raise ShapeError(f"q_init for mode {k} has shape {q.shape}")
        try:
            np.linalg.cholesky(q)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"q_init for mode {k} is not PD") from exc
        inits.append(q)
    return inits


def _precompute_innovations(
    unfolds: list[np.ndarray], dims: Dims, budget: int = _CHUNK_BUDGET
) -> list[np.ndarray | None]:
    """Dimension-normalised outer-product paths, mode by mode, if they fit.

    These do not depend on the recursion coefficients, so a fitter can pay
    for them once instead of once per objective evaluation.  Modes whose path
    would exceed the budget return None and are rebuilt chunk by chunk.
    """
    out: list[np.ndarray | None] = []
    t_len = unfolds[0].shape[0]
    for k, unf in enumerate(unfolds, start=1):
        nk = dims.size(k)
        if t_len * nk * nk > budget:
            out.append(None)
            continue
        innov = np.einsum("tij,tkj->tik", unf, unf)
        innov *= dims.size(k) / dims.total
        out.append(innov)
    return out


def _iter_q_chunks(
    unfolds: list[np.ndarray],
    dims: Dims,
    intercepts: Intercepts,
    params: CorrParams,
    q_init: list[np.ndarray],
    chunk: int,
    innovations: list[np.ndarray | None] | None = None,
) -> Iterator[tuple[int, int, list[np.ndarray]]]:
    """Yield (start, stop, [Q chunk per mode]) with Q[0] = q_init.

    The recursion in t is an IIR filter in the innovation term, run column by
    column over the flattened matrices so each chunk is one compiled filter
    call per mode.
    """
    t_len = unfolds[0].shape[0]
    order = dims.order
    if innovations is None:
        innovations = [None] * order
    prev = [q.copy() for q in q_init]
    for start in range(0, t_len, chunk):
        stop = min(t_len, start + chunk)
        qs = []
        for k in range(order):
            nk = dims.size(k + 1)
            alpha, beta = params.alphas[k], params.betas[k]
            lo = max(start, 1)
            if lo < stop:
                if innovations[k] is not None:
                    innov = alpha * innovations[k][lo - 1 : stop - 1]
                else:
                    seg = unfolds[k][lo - 1 : stop - 1]
                    innov = np.einsum("tij,tkj->tik", seg, seg)
                    innov *= alpha * dims.size(k + 1) / dims.total
                innov += (1.0 - alpha - beta) * intercepts.matrices[k]
                out, _ = lfilter(
                    [1.0],
                    [1.0, -beta],
                    innov.reshape(stop - lo, nk * nk),
                    axis=0,
                    zi=beta * prev[k].reshape(1, nk * nk),
                )
                qseg = out.reshape(stop - lo, nk, nk)
            else:
                qseg = np.empty((0, nk, nk))
            q = np.concatenate([q_init[k][None], qseg]) if start == 0 else qseg
            prev[k] = q[-1]
            qs.append(q)
        yield start, stop, qs


def _normalize_chunk(q: np.ndarray, strict: bool, mode: int | None = None) -> np.ndarray | None:
    """Quasi-correlation chunk -> correlation chunk, or None on breakdown."""
    diag = np.diagonal(q, axis1=1, axis2=2)
    if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
        if strict:
            where = f" in mode {mode}" if mode is not None else ""
            raise FilterBreakdownError(
                f"quasi-correlation diagonal became nonpositive{where}"
            )
        return None
    dinv = 1.0 / np.sqrt(diag)
    r = q * dinv[:, :, None]
    r *= dinv[:, None, :]
    # rescaling is exact only up to rounding; pin the unit diagonal and the
    # Cauchy-Schwarz bounds so downstream invariants hold identically
    np.clip(r, -1.0, 1.0, out=r)
    idx = np.arange(q.shape[1])
    r[:, idx, idx] = 1.0
    return r


def corr_filter(
    e: TensorSeries,
    intercepts: Intercepts,
    params: CorrParams,
    q_init: tuple[np.ndarray, ...] | None = None,
) -> CorrPath:
    """Run the mode-wise recursions over the whole sample and keep the paths."""
    dims = e.dims
    if intercepts.order != dims.order or params.order != dims.order:
        raise ShapeError("intercepts/params order does not match the tensor order")
    inits = _resolve_q_init(intercepts, q_init, dims)
    unfolds = [e.unfold(k) for k in range(1, dims.order + 1)]
    t_len = len(e)
    q_paths = [np.empty((t_len, n, n)) for n in dims.sizes]
    r_paths = [np.empty((t_len, n, n)) for n in dims.sizes]
    for start, stop, qs in _iter_q_chunks(
        unfolds, dims, intercepts, params, inits, _default_chunk(t_len, dims)
    ):
        for k, q in enumerate(qs):
            q_paths[k][start:stop] = q
            r_paths[k][start:stop] = _normalize_chunk(q, strict=True, mode=k + 1)
    return CorrPath(q=tuple(q_paths), r=tuple(r_paths))


def iter_corr_filter(
    e: TensorSeries,
    intercepts: Intercepts,
    params: CorrParams,
    q_init: tuple[np.ndarray, ...] | None = None,
) -> Iterator[tuple[int, int, list[np.ndarray], list[np.ndarray]]]:
    """Stream the filtered path as (start, stop, [Q chunks], [R chunks]).

    Equivalent to :func:`corr_filter` but never materialises the full path,
    which matters when one mode is large (a T x N_k x N_k path can dwarf the
    data itself).
    """
    dims = e.dims
    inits = _resolve_q_init(intercepts, q_init, dims)
    unfolds = [e.unfold(k) for k in range(1, dims.order + 1)]
    for start, stop, qs in _iter_q_chunks(
        unfolds, dims, intercepts, params, inits, _default_chunk(len(e), dims)
    ):
        yield start, stop, qs, [
            _normalize_chunk(q, strict=True, mode=k + 1) for k, q in enumerate(qs)
        ]


def corr_filter_last_state(
    e: TensorSeries,
    intercepts: Intercepts,
    params: CorrParams,
    q_init: tuple[np.ndarray, ...] | None = None,
) -> CorrState:
    """Final filtered state only, with memory flat in the sample length."""
    last_q = last_r = None
    for _, _, qs, rs in iter_corr_filter(e, intercepts, params, q_init):
        last_q = tuple(q[-1].copy() for q in qs)
        last_r = tuple(r[-1].copy() for r in rs)
    return CorrState(q=last_q, r=last_r)


_TRIANGULAR_SOLVE_ORDER = 64


def _chunk_loglik_terms(
    r_chunks: list[np.ndarray],
    e_rows: np.ndarray,
    dims: Dims,
) -> tuple[float, float]:
    """(weighted logdet sum, quadratic-form sum) for one time chunk.

    Raises ``np.linalg.LinAlgError`` when any correlation matrix fails its
    Cholesky factorisation.
    """
    logdet_total = 0.0
    g = e_rows
    for k, r in enumerate(r_chunks, start=1):
        chol = np.linalg.cholesky(r)
        logdets = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        logdet_total += (dims.total / dims.size(k)) * float(logdets.sum())
        gu = series_unfold(g, dims, k)
        if dims.size(k) >= _TRIANGULAR_SOLVE_ORDER:
            # large mode: reuse the factors instead of a second factorisation
            gu = np.stack(
                [
                    solve_triangular(chol[t].T, solve_triangular(chol[t], gu[t], lower=True))
                    for t in range(gu.shape[0])
                ]
            )
        else:
            gu = np.linalg.solve(r, gu)
        g = series_fold(gu, dims, k)
    quad = float((e_rows * g).sum())
    return logdet_total, quad


def corr_loglik(e: TensorSeries, path: CorrPath) -> float:
    """Correlation quasi-log-likelihood of filtered states.

    Evaluates, in mode-product form and per-time,

        -(1/2T) sum_t [ sum_k (N/N_k) log|R_k[t]|
                        + vec(E_t)' (kron_k R_k[t])^{-1} vec(E_t)
                        - vec(E_t)' vec(E_t) ],

    which is exactly zero when every R_k[t] is the identity.
    """
    dims = e.dims
    t_len = len(e)
    if len(path) != t_len:
        raise ShapeError(f"path length {len(path)} does not match series length {t_len}")
    chunk = _default_chunk(t_len, dims)
    total = 0.0
    for start in range(0, t_len, chunk):
        stop = min(t_len, start + chunk)
        rows = e.values[start:stop]
        try:
            logdet, quad = _chunk_loglik_terms(
                [r[start:stop] for r in path.r], rows, dims
            )
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(
                "a mode correlation matrix is not positive definite"
            ) from exc
        total += logdet + quad - float((rows * rows).sum())
    return -total / (2.0 * t_len)


def _negloglik_from_params(
    params: CorrParams,
    unfolds: list[np.ndarray],
    e_values: np.ndarray,
    dims: Dims,
    intercepts: Intercepts,
    q_init: list[np.ndarray],
    chunk: int,
    innovations: list[np.ndarray | None] | None = None,
) -> float:
    """Fused filter + likelihood pass; +inf marks an invalid parameter point."""
    t_len = e_values.shape[0]
    total = 0.0
    for start, stop, qs in _iter_q_chunks(
        unfolds, dims, intercepts, params, q_init, chunk, innovations
    ):
        r_chunks = []
        for q in qs:
            r = _normalize_chunk(q, strict=False)
            if r is None:
                return np.inf
            r_chunks.append(r)
        rows = e_values[start:stop]
        try:
            logdet, quad = _chunk_loglik_terms(r_chunks, rows, dims)
        except np.linalg.LinAlgError:
            return np.inf
        total += logdet + quad - float((rows * rows).sum())
    value = total / (2.0 * t_len)
    return value if np.isfinite(value) else np.inf


def _decode_corr(z: np.ndarray, order: int) -> CorrParams:
    alphas, betas = [], []
    for k in range(order):
        persistence = (1.0 - STATIONARITY_MARGIN) * expit(z[2 * k])
        alpha = persistence * expit(z[2 * k + 1])
        alphas.append(float(alpha))
        betas.append(float(persistence - alpha))
    return CorrParams(tuple(alphas), tuple(betas))


def _encode_corr(alphas, betas) -> np.ndarray:
    z = np.empty(2 * len(alphas))
    for k, (a, b) in enumerate(zip(alphas, betas)):
        s = a + b
        z[2 * k] = np.log(s / (1.0 - STATIONARITY_MARGIN - s) + 1e-300) if s < 1 else 10.0
        z[2 * k + 1] = np.log(a / (s - a) + 1e-300)
    return z


def fit_correlation(
    e: TensorSeries,
    intercepts: Intercepts,
    q_init: tuple[np.ndarray, ...] | None = None,
    start: tuple[float, float] = (0.05, 0.90),
) -> CorrFit:
    """Maximise the correlation likelihood over the 2K coefficients.

    The intercepts stay fixed at their targeting estimates; the search runs
    over logit-transformed (alpha_k, beta_k) so the stationarity constraint
    alpha_k + beta_k <= 1 - 1e-6 can never be violated.
    """
    dims = e.dims
    inits = _resolve_q_init(intercepts, q_init, dims)
    unfolds = [e.unfold(k) for k in range(1, dims.order + 1)]
    chunk = _default_chunk(len(e), dims)
    innovations = _precompute_innovations(unfolds, dims)

    def objective(z: np.ndarray) -> float:
        return _negloglik_from_params(
            _decode_corr(z, dims.order),
            unfolds,
            e.values,
            dims,
            intercepts,
            inits,
            chunk,
            innovations,
        )

    z0 = _encode_corr([start[0]] * dims.order, [start[1]] * dims.order)
    res = minimize(
        objective,
        z0,
        method="Nelder-Mead",
        options={"xatol": 1e-4, "fatol": 1e-8, "maxiter": 4000, "maxfev": 6000},
    )
    params = _decode_corr(res.x, dims.order)
    return CorrFit(
        params=params,
        loglik=float(-res.fun),
        converged=bool(res.success),
        nfev=int(res.nfev),
        message=str(res.message),
    )
