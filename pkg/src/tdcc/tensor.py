"""Dense order-K tensor container and the linear algebra it feeds.

Layout contract
---------------
A tensor with dimension sizes ``(N_1, ..., N_K)`` is stored as a flat vector
of ``N = prod(N_k)`` values where entry ``(i_1, ..., i_K)`` (1-based in the
math, 0-based in code) sits at offset ``i_1 + N_1*i_2 + N_1*N_2*i_3 + ...``,
i.e. mode 1 varies fastest.  This is the column-major generalisation of the
``vec`` operator, so with the unfolding convention used below,

    vec(X x_1 A_1 ... x_K A_K) = (A_K kron ... kron A_1) vec(X).

Mode indices ``k`` in the public API are 1-based, matching the usual
``mat_k`` notation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefiniteError, ShapeError

__all__ = [
    "Dims",
    "Tensor",
    "TensorSeries",
    "vec",
    "reshape",
    "mat_k",
    "fold_k",
    "mode_k_product",
    "kron_chain",
    "unfold_permutation",
    "series_unfold",
    "series_fold",
    "sym_sqrt",
    "symmetrize",
]


@dataclass(frozen=True)
class Dims:
    """Ordered mode sizes ``(N_1, ..., N_K)`` of an order-K tensor."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if len(sizes) < 1:
            raise ShapeError("a tensor needs at least one mode")
        if any(n < 1 for n in sizes):
            raise ShapeError(f"mode sizes must be positive, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def order(self) -> int:
        """Number of modes K."""
        return len(self.sizes)

    @property
    def total(self) -> int:
        """Total entry count N = prod(N_k), computed exactly."""
        return math.prod(self.sizes)

    def size(self, k: int) -> int:
        """Size N_k of mode k (1-based)."""
        self._check_mode(k)
        return self.sizes[k - 1]

    def complement(self, k: int) -> int:
        """Product of all mode sizes except mode k, N_{-k} = N / N_k."""
        self._check_mode(k)
        return self.total // self.sizes[k - 1]

    def _check_mode(self, k: int):
        if not 1 <= k <= self.order:
            raise ShapeError(f"mode {k} out of range for order-{self.order} tensor")

    def __str__(self) -> str:
        return "x".join(str(n) for n in self.sizes)

    @classmethod
    def parse(cls, text: str) -> "Dims":
        """Parse a ``N1xN2x...xNK`` string."""
        try:
            sizes = tuple(int(part) for part in text.lower().split("x"))
        except ValueError as exc:
            raise ShapeError(f"cannot parse dims {text!r}: expected N1xN2x...xNK") from exc
        return cls(sizes)


@dataclass(frozen=True, eq=False)
class Tensor:
    """Order-K tensor stored as a flat vector in the layout above."""

    dims: Dims
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float).reshape(-1)
        if data.size != self.dims.total:
            raise ShapeError(
                f"data length {data.size} does not match dims {self.dims} (N={self.dims.total})"
            )
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Tensor":
        """Build from an order-K ndarray indexed ``[i_1, ..., i_K]``."""
        array = np.asarray(array, dtype=float)
        dims = Dims(array.shape)
        return cls(dims, array.reshape(-1, order="F"))

    @classmethod
    def zeros(cls, dims: Dims) -> "Tensor":
        return cls(dims, np.zeros(dims.total))

    def to_array(self) -> np.ndarray:
        """Return the order-K ndarray view, indexed ``[i_1, ..., i_K]``."""
        return self.data.reshape(self.dims.sizes, order="F")

    def require_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("tensor contains non-finite values")
        return self


def vec(x: Tensor) -> np.ndarray:
    """Vectorisation of ``x`` in the declared linear layout (copy)."""
    return x.data.copy()


def reshape(values: np.ndarray, dims: Dims) -> Tensor:
    """Inverse of :func:`vec`: wrap a flat vector back into a tensor."""
    return Tensor(dims, np.asarray(values, dtype=float))


def _unfold_axes(order: int, k: int) -> tuple[int, ...]:
    # Axis order so that a C-order reshape enumerates the remaining modes
    # with lower-numbered modes varying fastest (Kolda-Bader columns).
    rest = [ax for ax in range(order) if ax != k - 1]
    return (k - 1, *reversed(rest))


def mat_k(x: Tensor, k: int) -> np.ndarray:
    """Mode-k unfolding: an ``N_k x N_{-k}`` matrix whose rows index mode k.

    Columns enumerate the remaining indices with lower-numbered modes varying
    fastest; for an order-2 tensor, ``mat_k(x, 1)`` is the matrix itself.
    """
    x.dims._check_mode(k)
    arr = x.to_array()
    return (
        arr.transpose(_unfold_axes(x.dims.order, k))
        .reshape(x.dims.size(k), x.dims.complement(k))
        .copy()
    )


def fold_k(matrix: np.ndarray, dims: Dims, k: int) -> Tensor:
    """Inverse of :func:`mat_k` for the given target ``dims``."""
    dims._check_mode(k)
    matrix = np.asarray(matrix, dtype=float)
    expected = (dims.size(k), dims.complement(k))
    if matrix.shape != expected:
        raise ShapeError(f"unfolded matrix has shape {matrix.shape}, expected {expected}")
    axes = _unfold_axes(dims.order, k)
    shape = tuple(dims.sizes[ax] for ax in axes)
    arr = matrix.reshape(shape).transpose(np.argsort(axes))
    return Tensor.from_array(arr)


def mode_k_product(x: Tensor, a: np.ndarray, k: int) -> Tensor:
    """Mode-k product ``x x_k a``; mode k's size N_k becomes ``a.shape[0]``."""
    x.dims._check_mode(k)
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != x.dims.size(k):
        raise ShapeError(
            f"matrix shape {a.shape} does not act on mode {k} of size {x.dims.size(k)}"
        )
    arr = np.tensordot(a, x.to_array(), axes=(1, k - 1))
    arr = np.moveaxis(arr, 0, k - 1)
    return Tensor.from_array(arr)


def kron_chain(mats: list[np.ndarray]) -> np.ndarray:
    """Kronecker product ``A_K kron ... kron A_1`` of per-mode matrices.

    ``mats`` is given in mode order ``[A_1, ..., A_K]``; the product places
    the last mode leftmost, matching the layout contract.
    """
    out = np.asarray(mats[0], dtype=float)
    for a in mats[1:]:
        out = np.kron(np.asarray(a, dtype=float), out)
    return out


def unfold_permutation(dims: Dims, k: int) -> np.ndarray:
    """Permutation ``p`` with ``vec(mat_k(x)) = vec(x)[p]``.

    ``vec`` of the unfolding means its own column-major flattening, i.e. the
    vec order of the order-2 tensor with dims ``(N_k, N_{-k})``.
    """
    index = Tensor(dims, np.arange(dims.total, dtype=float))
    return mat_k(index, k).reshape(-1, order="F").astype(np.intp)


def series_unfold(flat: np.ndarray, dims: Dims, k: int) -> np.ndarray:
    """Batched mode-k unfolding of (T, N) vec-order rows -> (T, N_k, N_{-k})."""
    order = dims.order
    arr = flat.reshape((flat.shape[0], *dims.sizes[::-1]))
    axes = _unfold_axes(order, k)
    c_axes = tuple(order - ax for ax in axes)
    return arr.transpose((0, *c_axes)).reshape(
        flat.shape[0], dims.size(k), dims.complement(k)
    )


def series_fold(unf: np.ndarray, dims: Dims, k: int) -> np.ndarray:
    """Inverse of :func:`series_unfold`, back to (T, N) vec-order rows."""
    order = dims.order
    axes = _unfold_axes(order, k)
    c_axes = (0, *(order - ax for ax in axes))
    shape = (unf.shape[0], *(dims.sizes[::-1][ax - 1] for ax in c_axes[1:]))
    arr = unf.reshape(shape).transpose(np.argsort(c_axes))
    return arr.reshape(unf.shape[0], dims.total)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average a nearly-symmetric matrix with its transpose."""
    return 0.5 * (a + a.T)


def sym_sqrt(u: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Raises ``NotPositiveDefiniteError`` when an eigenvalue falls below
    ``-rel_tol * max(eigenvalue)``; small negative eigenvalues inside the
    tolerance are clamped to zero.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {u.shape}")
    vals, vecs = np.linalg.eigh(symmetrize(u))
    top = max(vals[-1], 0.0)
    if vals[0] < -rel_tol * max(top, 1e-300):
        raise NotPositiveDefiniteError(
            f"matrix is not PSD: min eigenvalue {vals[0]:.3e} vs max {top:.3e}"
        )
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return symmetrize(root @ vecs.T)


class TensorSeries:
    """Time series of tensors sharing one ``Dims``, stored as a (T, N) array.

    Row ``t`` holds ``vec`` of the t-th tensor.  This is the in-memory twin
    of the on-disk dataset format and the shape every estimation routine
    consumes.
    """

    def __init__(self, dims: Dims, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[1] != dims.total:
            raise ShapeError(
                f"series shape {values.shape} does not match dims {dims} (N={dims.total})"
            )
        self.dims = dims
        self.values = values

    @classmethod
    def from_tensors(cls, tensors: list[Tensor]) -> "TensorSeries":
        if not tensors:
            raise ShapeError("empty tensor series")
        dims = tensors[0].dims
        for t, x in enumerate(tensors):
            if x.dims != dims:
                raise ShapeError(f"tensor {t} has dims {x.dims}, expected {dims}")
        return cls(dims, np.stack([x.data for x in tensors]))

    def __len__(self) -> int:
        return self.values.shape[0]

    def tensor(self, t: int) -> Tensor:
        return Tensor(self.dims, self.values[t].copy())

    def tensors(self) -> list[Tensor]:
        return [self.tensor(t) for t in range(len(self))]

    def unfold(self, k: int) -> np.ndarray:
        """All mode-k unfoldings at once, shape (T, N_k, N_{-k})."""
        self.dims._check_mode(k)
        return series_unfold(self.values, self.dims, k)

    def require_finite(self) -> "TensorSeries":
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("series contains non-finite values")
        return self
