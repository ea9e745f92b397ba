"""Vector and matrix DCC baselines as reshaping adapters over one engine.

The comparison grid pairs a structural family with an intercept estimator:

    tdcc-s   tdcc-ls   tdcc-nls    full tensor model
    mdcc1-*  mdcc2-*   mdcc3-*     order-2 model on the mode-k unfolding
    vdcc-s   vdcc-ls   vdcc-nls    order-1 model on the vectorised data

Every family runs the same recursion and likelihood code; only the view of
the data changes, so the vector model is literally the K=1 instantiation.
The ``*-nls`` names are reserved and raise until a nonlinear shrinkage
estimator exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UnimplementedMethodError
from .estimation import TdccFit, VolatilityFit, two_step_fit
from .tensor import Dims, TensorSeries, unfold_permutation

__all__ = [
    "MethodSpec",
    "METHOD_NAMES",
    "vectorize_adapter",
    "unfold_adapter",
    "MethodFit",
    "fit_method",
]

_INTERCEPT_BY_SUFFIX = {
    "s": "sample",
    "ls": "linear_shrinkage",
    "nls": "nonlinear_shrinkage",
}
_SUFFIX_BY_INTERCEPT = {v: k for k, v in _INTERCEPT_BY_SUFFIX.items()}


@dataclass(frozen=True)
class MethodSpec:
    """One cell of the comparison grid."""

    family: str  # "tdcc" | "mdcc" | "vdcc"
    intercept: str  # "sample" | "linear_shrinkage" | "nonlinear_shrinkage"
    mode: int | None = None  # unfolding mode for the mdcc family

    def __post_init__(self):
        if self.family not in ("tdcc", "mdcc", "vdcc"):
            raise ValueError(f"unknown model family {self.family!r}")
        if self.intercept not in _SUFFIX_BY_INTERCEPT:
            raise ValueError(f"unknown intercept method {self.intercept!r}")
        if (self.family == "mdcc") != (self.mode is not None):
            raise ValueError("a mode index is required exactly for the mdcc family")
        if self.mode is not None and self.mode < 1:
            raise ValueError(f"mode index must be >= 1, got {self.mode}")

    @property
    def name(self) -> str:
        stem = self.family if self.mode is None else f"{self.family}{self.mode}"
        return f"{stem}-{_SUFFIX_BY_INTERCEPT[self.intercept]}"

    @classmethod
    def parse(cls, name: str) -> "MethodSpec":
        try:
            stem, suffix = name.strip().lower().split("-")
            intercept = _INTERCEPT_BY_SUFFIX[suffix]
            if stem.startswith("mdcc"):
                return cls("mdcc", intercept, int(stem[4:]))
            if stem in ("tdcc", "vdcc"):
                return cls(stem, intercept)
        except (ValueError, KeyError):
            pass
        raise ValueError(
            f"cannot parse method {name!r}; expected e.g. tdcc-s, mdcc2-ls, vdcc-ls"
        )


# Runnable grid; the *-nls twins parse but raise until implemented.
METHOD_NAMES = tuple(
    f"{stem}-{suffix}"
    for stem in ("tdcc", "mdcc1", "mdcc2", "mdcc3", "vdcc")
    for suffix in ("s", "ls")
)


def vectorize_adapter(x: TensorSeries) -> tuple[TensorSeries, np.ndarray]:
    """View the series as order-1 tensors of dimension N (plus entry map)."""
    dims = Dims((x.dims.total,))
    return TensorSeries(dims, x.values), np.arange(x.dims.total, dtype=np.intp)


def unfold_adapter(x: TensorSeries, k: int) -> tuple[TensorSeries, np.ndarray]:
    """View the series as order-2 tensors (N_k, N_{-k}) via mode-k unfolding.

    Returns the adapted series together with the permutation ``p`` such that
    ``adapted.values[:, i] == x.values[:, p[i]]``.
    """
    x.dims._check_mode(k)
    perm = unfold_permutation(x.dims, k)
    dims = Dims((x.dims.size(k), x.dims.complement(k)))
    return TensorSeries(dims, x.values[:, perm]), perm


@dataclass
class MethodFit:
    """A fitted method plus the entry map back to the source vec order."""

    spec: MethodSpec
    fit: TdccFit
    perm: np.ndarray  # adapted entry i holds source entry perm[i]

    def inverse_perm(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv

    def sigma_in_source_order(self, sigma: np.ndarray) -> np.ndarray:
        """Reindex an adapted-order covariance back to the source vec order."""
        inv = self.inverse_perm()
        return sigma[np.ix_(inv, inv)]


def adapt_series(x: TensorSeries, spec: MethodSpec) -> tuple[TensorSeries, np.ndarray]:
    if spec.family == "tdcc":
        return x, np.arange(x.dims.total, dtype=np.intp)
    if spec.family == "vdcc":
        return vectorize_adapter(x)
    if spec.mode > x.dims.order:
        raise ShapeError(
            f"{spec.name} needs mode {spec.mode} but the data has order {x.dims.order}"
        )
    return unfold_adapter(x, spec.mode)


def fit_method(
    x: TensorSeries,
    spec: MethodSpec | str,
    keep_paths: bool = True,
    volatility: VolatilityFit | None = None,
) -> MethodFit:
    """Fit one grid method; ``volatility`` is reused through the entry map."""
    if isinstance(spec, str):
        spec = MethodSpec.parse(spec)
    if spec.intercept == "nonlinear_shrinkage":
        raise UnimplementedMethodError(
            f"{spec.name}: nonlinear shrinkage is reserved but not implemented"
        )
    adapted, perm = adapt_series(x, spec)
    vol = None
    if volatility is not None:
        vol = VolatilityFit(
            params=tuple(volatility.params[i] for i in perm),
            sigma2=volatility.sigma2[:, perm],
            loglik=volatility.loglik,
            converged=volatility.converged,
        )
    fit = two_step_fit(adapted, spec.intercept, keep_paths=keep_paths, volatility=vol)
    fit.diagnostics["method"] = spec.name
    return MethodFit(spec=spec, fit=fit, perm=perm)
