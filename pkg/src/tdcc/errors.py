"""Exception taxonomy shared across the package.

Every error carries a short machine-readable ``code`` so the CLI can emit a
single parseable diagnostic line while the message stays human-oriented.
"""

from __future__ import annotations


class TdccError(Exception):
    """Base class for all errors raised by this package."""

    code = "internal"


class DataError(TdccError):
    """Malformed input data (bad header, ragged rows, non-numeric cells)."""

    code = "data-format"


class ShapeError(TdccError):
    """Dimension or shape mismatch between tensors, matrices, or series."""

    code = "shape-mismatch"


class NotPositiveDefiniteError(TdccError):
    """A matrix required to be positive (semi)definite is not."""

    code = "not-positive-definite"


class DegenerateSeriesError(TdccError):
    """An entry series has zero variance and cannot drive a volatility fit."""

    code = "degenerate-series"


class FilterBreakdownError(TdccError):
    """A recursion produced an invalid state (nonpositive variance scale)."""

    code = "filter-breakdown"


class UnimplementedMethodError(TdccError):
    """A reserved method name (e.g. nonlinear shrinkage) is not implemented."""

    code = "unimplemented-method"


class SolverError(TdccError):
    """A numerical solver failed to reach its required tolerance."""

    code = "solver"
