"""On-disk dataset format: a dims header plus CSV rows in vec order.

    # dims=10x11x4
    date,0.12,-0.03,...      <- optional leading date column
    0.12,-0.03,...           <- or bare numeric rows

Each row carries exactly N = prod(dims) values laid out in the vec order of
the tensor module (mode 1 fastest).  Floats are written with ``repr`` so a
load/save round trip is byte-stable.
"""

from __future__ import annotations

from pathlib import Path

from .errors import DataError
from .tensor import Dims, TensorSeries

__all__ = ["load_dataset", "save_dataset"]

_HEADER_PREFIX = "# dims="


def load_dataset(path: str | Path) -> tuple[TensorSeries, list[str] | None]:
    """Read a dataset file; returns the series and dates when present."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or not lines[0].startswith(_HEADER_PREFIX):
        raise DataError(
            f"{path}:1: missing header; the first line must be '{_HEADER_PREFIX}N1xN2x...xNK'"
        )
    try:
        dims = Dims.parse(lines[0][len(_HEADER_PREFIX):].strip())
    except Exception as exc:
        raise DataError(f"{path}:1: bad dims header: {exc}") from exc

    n = dims.total
    rows: list[list[float]] = []
    dates: list[str] = []
    has_dates: bool | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cells = line.split(",")
        if has_dates is None:
            if len(cells) == n + 1:
                has_dates = True
            elif len(cells) == n:
                has_dates = False
            else:
                raise DataError(
                    f"{path}:{lineno}: expected {n} values (or date + {n}), got {len(cells)}"
                )
        expected = n + 1 if has_dates else n
        if len(cells) != expected:
            raise DataError(
                f"{path}:{lineno}: expected {expected} fields, got {len(cells)}"
            )
        if has_dates:
            dates.append(cells[0].strip())
            cells = cells[1:]
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-numeric cell: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    series = TensorSeries(dims, rows).require_finite()
    return series, dates if has_dates else None


def save_dataset(
    path: str | Path, series: TensorSeries, dates: list[str] | None = None
) -> None:
    """Write a dataset file in the canonical byte-stable formatting."""
    path = Path(path)
    if dates is not None and len(dates) != len(series):
        raise DataError(f"{len(dates)} dates for {len(series)} rows")
    out = [f"{_HEADER_PREFIX}{series.dims}"]
    for t in range(len(series)):
        cells = [repr(v) for v in series.values[t].tolist()]
        if dates is not None:
            cells.insert(0, dates[t])
        out.append(",".join(cells))
    path.write_text("\n".join(out) + "\n", encoding="utf-8", newline="\n")
