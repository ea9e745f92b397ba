"""Command-line interface: simulate / fit / forecast / backtest / experiment.

Every subcommand is deterministic given its configuration and seed: floats
are written with ``repr``, JSON keys are sorted, and figures render through a
fixed-geometry Agg pipeline.  Engine failures exit nonzero after printing a
single ``error[<code>]: <message>`` line on stderr.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .baselines import METHOD_NAMES, MethodSpec
from .datasets import load_dataset, save_dataset
from .errors import DataError, TdccError
from .estimation import filter_states, forecast_one_step, two_step_fit
from .figures import save_backtest_figures, save_experiment_figure, save_heatmap_figure
from .model import model_from_json, model_to_json
from .portfolio import mode_weight_profile, rolling_backtest
from .simulate import (
    ExperimentConfig,
    SimConfig,
    default_truth_model,
    make_rng,
    run_experiment,
    simulate_paths,
)
from .tensor import Dims, TensorSeries


def _fail(exc: TdccError) -> None:
    click.echo(f"error[{exc.code}]: {exc}", err=True)
    sys.exit(1)


def _command_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except TdccError as exc:
            _fail(exc)
        except (ValueError, np.linalg.LinAlgError) as exc:
            click.echo(f"error[invalid-input]: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _resolve_method(method: str, intercept: str | None) -> MethodSpec:
    """Combine a method name or family with the optional --intercept flag."""
    suffix = {"sample": "s", "ls": "ls", "s": "s", "linear_shrinkage": "ls"}.get(
        intercept or "", None
    )
    if "-" in method:
        spec = MethodSpec.parse(method)
        if suffix is not None and not spec.name.endswith(f"-{suffix}"):
            raise ValueError(
                f"--method {method} conflicts with --intercept {intercept}"
            )
        return spec
    return MethodSpec.parse(f"{method}-{suffix or 's'}")


@click.group()
@click.version_option(version=__version__, prog_name="tdcc")
def main() -> None:
    """Tensor dynamic conditional correlation modelling toolkit."""


method_option = click.option(
    "--method",
    default="tdcc-s",
    show_default=True,
    help=f"model family or full method name; grid: {', '.join(METHOD_NAMES)}",
)
intercept_option = click.option(
    "--intercept",
    type=click.Choice(["sample", "ls"]),
    default=None,
    help="intercept estimator when --method names only a family",
)
figures_option = click.option(
    "--figures/--no-figures", default=True, show_default=True, help="render report figures"
)


@main.command()
@click.option("--dims", required=True, help="mode sizes, e.g. 10x11x4")
@click.option("--T", "horizon", type=int, required=True, help="sample length")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--burn-in", type=int, default=200, show_default=True)
@click.option("--c-spread", type=float, default=0.3, show_default=True,
              help="off-diagonal weight of the synthetic intercepts")
@click.option("--c-file", type=click.Path(exists=True), default=None,
              help="JSON file with per-mode intercept matrices")
@click.option("--model", "model_path", type=click.Path(exists=True), default=None,
              help="simulate from a stored model instead of the synthetic truth")
@click.option("--out", required=True, type=click.Path())
@_command_errors
def simulate(dims, horizon, seed, burn_in, c_spread, c_file, model_path, out):
    """Simulate a tensor return series and write it as a dataset file."""
    parsed = Dims.parse(dims)
    if model_path is not None:
        model, _ = model_from_json(Path(model_path).read_text(encoding="utf-8"))
        if model.dims != parsed:
            raise DataError(f"--dims {dims} conflicts with model dims {model.dims}")
    else:
        model = default_truth_model(parsed, c_spread, _load_c_matrices(c_file))
    cfg = SimConfig(model=model, horizon=horizon, seed=seed, burn_in=burn_in)
    series = simulate_paths(cfg.model, cfg.horizon, cfg.burn_in, make_rng(cfg.seed)).x
    save_dataset(out, series)
    click.echo(f"wrote {len(series)} x {series.dims} observations to {out}")


def _load_c_matrices(path: str | None):
    if path is None:
        return None
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return tuple(np.array(c, dtype=float) for c in payload)
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise DataError(f"cannot parse intercept file {path}: {exc}") from exc


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@method_option
@intercept_option
@click.option("--demean/--no-demean", default=False, show_default=True,
              help="subtract each entry's sample mean before fitting")
@click.option("--out", required=True, type=click.Path())
@_command_errors
def fit(data, method, intercept, demean, out):
    """Two-step fit; writes the fitted model as versioned JSON."""
    spec = _resolve_method(method, intercept)
    series, _ = load_dataset(data)
    if demean:
        series = TensorSeries(series.dims, series.values - series.values.mean(axis=0))
    from .baselines import fit_method

    mfit = fit_method(series, spec, keep_paths=False)
    diag = dict(mfit.fit.diagnostics)
    diag["demeaned"] = demean
    diag["loglik_volatility"] = mfit.fit.loglik_volatility
    diag["loglik_correlation"] = mfit.fit.loglik_correlation
    Path(out).write_text(model_to_json(mfit.fit.model, diag), encoding="utf-8")
    click.echo(
        f"fitted {spec.name} on {len(series)} x {series.dims} observations -> {out}"
    )


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", type=click.Path(exists=True), default=None,
              help="stored model JSON; when omitted the model is refit with --method")
@method_option
@intercept_option
@figures_option
@click.option("--out", required=True, type=click.Path())
@_command_errors
def forecast(data, model_path, method, intercept, figures, out):
    """One-step-ahead covariance forecast, written as a lower-triangle CSV."""
    series, _ = load_dataset(data)
    if model_path is not None:
        model, _ = model_from_json(Path(model_path).read_text(encoding="utf-8"))
        fitted = filter_states(model, series)
    else:
        spec = _resolve_method(method, intercept)
        from .baselines import fit_method

        mfit = fit_method(series, spec)
        if mfit.spec.family != "tdcc":
            raise DataError("forecast currently reshapes only through --method tdcc-*")
        fitted = mfit.fit
    fc = forecast_one_step(fitted, series)
    sigma = fc.sigma_next
    lines = ["i,j,sigma"]
    for i in range(sigma.shape[0]):
        for j in range(i + 1):
            lines.append(f"{i},{j},{float(sigma[i, j])!r}")
    Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    if figures:
        save_heatmap_figure(sigma, Path(out).with_suffix(".png"), "one-step covariance forecast")
    click.echo(f"wrote {sigma.shape[0]}x{sigma.shape[0]} forecast to {out}")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True))
@method_option
@intercept_option
@click.option("--train-window", type=int, required=True)
@click.option("--objective", type=click.Choice(["minvar", "meanvar"]), default="minvar",
              show_default=True)
@click.option("--constrained/--unconstrained", default=False, show_default=True)
@click.option("--stride", type=int, default=1, show_default=True,
              help="refit every this many test points, filtering in between")
@click.option("--annualization", type=float, default=252.0, show_default=True)
@click.option("--demean/--no-demean", default=True, show_default=True)
@click.option("--seed", type=int, default=0, help="echoed in the report; backtests are deterministic")
@figures_option
@click.option("--out", required=True, type=click.Path(),
              help="output stem; writes <out>.csv and <out>.json")
@_command_errors
def backtest(data, method, intercept, train_window, objective, constrained, stride,
             annualization, demean, seed, figures, out):
    """Rolling-window covariance forecasts feeding portfolio weights."""
    spec = _resolve_method(method, intercept)
    series, dates = load_dataset(data)
    report = rolling_backtest(
        series,
        spec,
        train_window,
        objective=objective,
        constrained=constrained,
        stride=stride,
        periods_per_year=annualization,
        demean=demean,
    )
    stem = Path(out)
    _write_backtest_csv(stem.with_suffix(".csv"), report, series, dates, train_window)
    summary = {
        "av": report.av,
        "sd": report.sd,
        "ir": None if report.degenerate else report.ir,
        "degenerate": report.degenerate,
        "fallbacks": report.fallbacks,
        "config": {**report.config, "seed": seed, "data": str(data)},
    }
    stem.with_suffix(".json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    if figures:
        save_backtest_figures(report, series, stem)
    click.echo(
        f"backtest {spec.name}/{objective}{'/long-only' if constrained else ''}: "
        f"AV={report.av:.4f} SD={report.sd:.4f} "
        f"IR={'nan' if report.degenerate else f'{report.ir:.4f}'} "
        f"fallbacks={report.fallbacks}"
    )


def _write_backtest_csv(path, report, series, dates, train_window):
    header = ["date", "realized_return"]
    for k, nk in enumerate(series.dims.sizes, start=1):
        header.extend(f"w_mode{k}_{j + 1}" for j in range(nk))
    lines = [",".join(header)]
    for j in range(report.weights.shape[0]):
        t0 = train_window + j
        label = dates[t0] if dates is not None else str(t0)
        profile = np.concatenate(mode_weight_profile(report.weights[j], series))
        cells = [label, repr(float(report.portfolio_returns[j]))]
        cells.extend(repr(float(v)) for v in profile)
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _parse_config_file(path: Path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = body.split("=", 1)
        out[key.strip().lower()] = value.strip()
    return out


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="key=value file; command-line flags override its entries")
@click.option("--dims", default=None)
@click.option("--T", "horizons", default=None, help="comma-separated sample sizes")
@click.option("--methods", default=None, help="comma-separated method names")
@click.option("--replications", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--burn-in", type=int, default=None)
@click.option("--c-spread", type=float, default=None)
@click.option("--c-file", type=click.Path(exists=True), default=None)
@click.option("--workers", type=int, default=None)
@figures_option
@click.option("--out", default=None, type=click.Path(),
              help="output stem; writes <out>.csv, <out>.meta.json")
@_command_errors
def experiment(config_path, dims, horizons, methods, replications, seed, burn_in,
               c_spread, c_file, workers, figures, out):
    """Replicated simulate-fit-score comparison across methods and horizons."""
    file_cfg = _parse_config_file(Path(config_path)) if config_path else {}

    def pick(flag, key, fallback):
        if flag is not None:
            return flag
        return file_cfg.get(key, fallback)

    dims_text = pick(dims, "dims", None)
    if dims_text is None:
        raise DataError("dims must be given via --dims or the config file")
    horizon_text = pick(horizons, "t", pick(None, "horizons", "500"))
    method_text = pick(methods, "methods", "tdcc-s")
    out_stem = pick(out, "out", "experiment")

    cfg = ExperimentConfig(
        dims=Dims.parse(str(dims_text)),
        horizons=tuple(int(v) for v in str(horizon_text).split(",")),
        methods=tuple(m.strip() for m in str(method_text).split(",")),
        replications=int(pick(replications, "replications", 10)),
        seed=int(pick(seed, "seed", 0)),
        burn_in=int(pick(burn_in, "burn_in", 200)),
        c_spread=float(pick(c_spread, "c_spread", 0.3)),
        c_matrices=_load_c_matrices(pick(c_file, "c_file", None)),
        workers=int(pick(workers, "workers", 1)),
    )
    report = run_experiment(cfg)

    stem = Path(out_stem)
    lines = ["method,T,mean_loss,sd_loss,n_completed"]
    for cell in report.cells:
        lines.append(
            f"{cell.method},{cell.horizon},{cell.mean_loss!r},{cell.sd_loss!r},{cell.n_completed}"
        )
    stem.with_suffix(".csv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    meta = {
        "dims": str(cfg.dims),
        "horizons": list(cfg.horizons),
        "methods": list(cfg.methods),
        "substitutions": report.substitutions,
        "replications": cfg.replications,
        "seed": cfg.seed,
        "burn_in": cfg.burn_in,
        "c_spread": cfg.c_spread,
        "version": __version__,
    }
    stem.with_name(stem.name + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    if figures:
        save_experiment_figure(report, stem.with_suffix(".png"))
    for cell in report.cells:
        click.echo(
            f"{cell.method:10s} T={cell.horizon}: mean_loss={cell.mean_loss:.4f} "
            f"(n={cell.n_completed}/{cfg.replications})"
        )


if __name__ == "__main__":
    main()
