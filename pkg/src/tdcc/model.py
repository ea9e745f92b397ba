"""Model container, mode-level covariance statistics, and Sigma assembly.

The fitted object bundles one GARCH parameter triple per tensor entry (in vec
order), one targeting intercept matrix per mode, and one (alpha, beta) pair
per mode.  Mode-level second moments derive from the per-entry variances:

    s_jj_k[t] = sum over all other indices of sigma2[..., j at mode k, ...]
    y[t]      = sum of all entries of sigma2[t]        (common trace)
    S_k[t]    = D_k[t] R_k[t] D_k[t],   D_k[t] = diag(sqrt(s_jj_k[t]))

and the full conditional covariance of the vectorised tensor is assembled as
Sigma[t] = D[t] (R_K kron ... kron R_1) D[t] with D[t] the diagonal of
per-entry conditional standard deviations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from .correlation import CorrParams, CorrState, Intercepts
from .errors import DataError, ShapeError
from .garch import GarchParams
from .tensor import Dims, Tensor, kron_chain, mat_k

__all__ = [
    "TdccModel",
    "mode_variance_diag",
    "trace_process",
    "mode_covariance",
    "identified_scale_matrix",
    "assemble_sigma",
    "model_to_json",
    "model_from_json",
    "MODEL_SCHEMA",
]

MODEL_SCHEMA = "tdcc_model_v1"


@dataclass
class TdccModel:
    """Complete parameter set theta = (volatility, intercepts, correlation)."""

    dims: Dims
    garch: tuple[GarchParams, ...]
    intercepts: Intercepts
    corr: CorrParams

    def __post_init__(self):
        self.garch = tuple(self.garch)
        if len(self.garch) != self.dims.total:
            raise ShapeError(
                f"need one GARCH parameter triple per entry ({self.dims.total}), "
                f"got {len(self.garch)}"
            )
        if self.intercepts.order != self.dims.order or self.corr.order != self.dims.order:
            raise ShapeError("intercepts/correlation order does not match dims")
        for k, c in enumerate(self.intercepts.matrices, start=1):
            if c.shape != (self.dims.size(k), self.dims.size(k)):
                raise ShapeError(f"intercept {k} has shape {c.shape}")

    def unconditional_variances(self) -> np.ndarray:
        return np.array([p.unconditional_variance() for p in self.garch])


def mode_variance_diag(sigma2_t: Tensor, k: int) -> np.ndarray:
    """Mode-k variance aggregates (s_11_k, ..., s_NkNk_k) at one time point."""
    return mat_k(sigma2_t, k).sum(axis=1)


def trace_process(sigma2_t: Tensor) -> float:
    """Total conditional variance y_t, the common trace of every S_k."""
    return float(sigma2_t.data.sum())


def mode_covariance(sigma2_t: Tensor, state: CorrState, k: int) -> np.ndarray:
    """Mode-k conditional covariance S_k[t] = D_k R_k D_k."""
    d = np.sqrt(mode_variance_diag(sigma2_t, k))
    return state.r[k - 1] * np.outer(d, d)


def identified_scale_matrix(sigma2_t: Tensor, state: CorrState, k: int) -> np.ndarray:
    """Trace-identified mode factor: U_1 = S_1 and U_k = S_k / tr(S_k) for k >= 2."""
    s = mode_covariance(sigma2_t, state, k)
    if k == 1:
        return s
    return s / np.trace(s)


def _mode_variance_diag_series(sigma2: np.ndarray, dims: Dims, k: int) -> np.ndarray:
    """(T, N_k) mode aggregates for a whole (T, N) variance path."""
    from .tensor import TensorSeries

    return TensorSeries(dims, sigma2).unfold(k).sum(axis=2)


def assemble_sigma(sigma2_t: Tensor, state: CorrState) -> np.ndarray:
    """Conditional covariance of the vectorised tensor at one time point.

    Uses the per-entry volatilities directly on the diagonal, matching the
    form in which the correlation likelihood is written, so fitted objectives
    and assembled forecasts stay internally consistent.
    """
    vol = np.sqrt(sigma2_t.data)
    corr = kron_chain(list(state.r))
    return corr * np.outer(vol, vol)


def kron_diag_gap(sigma2_t: Tensor, state: CorrState) -> float:
    """Diagnostic: relative gap between the two diagonal constructions.

    Compares the per-entry volatilities with the separable form
    y_t^{-(K-1)/2} * kron_k D_k[t]; the two coincide only when the variance
    tensor factors exactly across modes.
    """
    dims = sigma2_t.dims
    per_entry = np.sqrt(sigma2_t.data)
    mode_roots = [np.sqrt(mode_variance_diag(sigma2_t, k)) for k in range(1, dims.order + 1)]
    separable = mode_roots[0]
    for d in mode_roots[1:]:
        separable = np.concatenate([separable * scale for scale in d])
    separable *= trace_process(sigma2_t) ** (-(dims.order - 1) / 2.0)
    return float(np.abs(separable / per_entry - 1.0).max())


def _params_payload(model: TdccModel) -> dict[str, Any]:
    return {
        "schema": MODEL_SCHEMA,
        "dims": list(model.dims.sizes),
        "garch": [{"omega": p.omega, "a": p.a, "b": p.b} for p in model.garch],
        "intercepts": [c.tolist() for c in model.intercepts.matrices],
        "corr": [
            {"alpha": a, "beta": b}
            for a, b in zip(model.corr.alphas, model.corr.betas)
        ],
    }


def model_to_json(model: TdccModel, diagnostics: dict[str, Any] | None = None) -> str:
    """Serialise a model to the versioned JSON document (deterministic bytes)."""
    payload = _params_payload(model)
    payload["diagnostics"] = diagnostics or {}
    return json.dumps(payload, sort_keys=True, separators=(",", ": "), indent=1) + "\n"


def model_from_json(text: str) -> tuple[TdccModel, dict[str, Any]]:
    """Parse the versioned JSON document back into a model."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON: {exc}") from exc
    if payload.get("schema") != MODEL_SCHEMA:
        raise DataError(
            f"unsupported model schema {payload.get('schema')!r}; expected {MODEL_SCHEMA!r}"
        )
    try:
        dims = Dims(tuple(payload["dims"]))
        garch = tuple(GarchParams(g["omega"], g["a"], g["b"]) for g in payload["garch"])
        intercepts = Intercepts(tuple(np.array(c, dtype=float) for c in payload["intercepts"]))
        corr = CorrParams(
            tuple(c["alpha"] for c in payload["corr"]),
            tuple(c["beta"] for c in payload["corr"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"model file is missing or corrupts a required field: {exc}") from exc
    model = TdccModel(dims=dims, garch=garch, intercepts=intercepts, corr=corr)
    return model, payload.get("diagnostics", {})
