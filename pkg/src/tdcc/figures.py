"""Report figures rendered next to the delimited outputs.

All figures go through the Agg backend with fixed geometry and stripped
metadata, so the PNG bytes are reproducible run to run.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_experiment_figure", "save_backtest_figures", "save_heatmap_figure"]

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _finish(fig, path: Path) -> Path:
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_experiment_figure(report, path: str | Path) -> Path:
    """Mean loss per method across horizons, log scale."""
    path = Path(path)
    methods = list(dict.fromkeys(c.method for c in report.cells))
    horizons = sorted({c.horizon for c in report.cells})
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for name in methods:
        means = [report.cell(name, h).mean_loss for h in horizons]
        ax.plot(horizons, means, marker="o", label=name)
    ax.set_yscale("log")
    ax.set_xlabel("sample size T")
    ax.set_ylabel("average loss")
    ax.set_xticks(horizons)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _finish(fig, path)


def save_backtest_figures(report, series, out_stem: str | Path) -> list[Path]:
    """Cumulative realised return, plus weight shares aggregated by mode."""
    from .portfolio import mode_weight_profile

    out_stem = Path(out_stem)
    paths = []

    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(np.cumsum(report.portfolio_returns), lw=1.2)
    ax.set_xlabel("test point")
    ax.set_ylabel("cumulative return")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    paths.append(_finish(fig, out_stem.with_name(out_stem.name + "_returns.png")))

    order = series.dims.order
    fig, axes = plt.subplots(order, 1, figsize=(6.4, 2.2 * order), squeeze=False)
    profiles = np.array(
        [np.concatenate(mode_weight_profile(w, series)) for w in report.weights]
    )
    offsets = np.cumsum([0, *series.dims.sizes])
    for k in range(order):
        ax = axes[k][0]
        block = profiles[:, offsets[k] : offsets[k + 1]]
        for level in range(series.dims.sizes[k]):
            ax.plot(block[:, level], lw=0.9, label=f"level {level + 1}")
        ax.axhline(1.0 / series.dims.sizes[k], ls="--", lw=0.8, color="0.4")
        ax.set_ylabel(f"mode {k + 1} weight")
        if series.dims.sizes[k] <= 6:
            ax.legend(fontsize=6, ncol=3)
    axes[-1][0].set_xlabel("test point")
    fig.tight_layout()
    paths.append(_finish(fig, out_stem.with_name(out_stem.name + "_weights.png")))
    return paths


def save_heatmap_figure(matrix: np.ndarray, path: str | Path, title: str = "") -> Path:
    """Covariance heatmap for forecast output."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    im = ax.imshow(matrix, cmap="RdBu_r", interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.85)
    if title:
        ax.set_title(title, fontsize=9)
    ax.set_xlabel("vec index")
    ax.set_ylabel("vec index")
    fig.tight_layout()
    return _finish(fig, path)
