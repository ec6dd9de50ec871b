"""CLI entry point for doubleshrink."""

import logging
import os
from pathlib import Path
from typing import Any, List, NoReturn, Optional

import numpy as np
import pandas as pd
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from doubleshrink import __version__, data_manager
from doubleshrink.backtest import run_backtest
from doubleshrink.core import sample_covariance
from doubleshrink.estimator import fit_at_lambda, loss_curve, optimize_lambda, uniform_lambda_grid
from doubleshrink.exceptions import ConfigError, DoubleShrinkError, InvalidParameterError
from doubleshrink.models import (
    ExperimentSummary,
    RunConfig,
    Scenario,
    SolutionRecord,
    StrategyName,
)
from doubleshrink.simulate import (
    draw_model,
    generate_panel,
    preset_configs,
    run_relative_loss_experiment,
)
from doubleshrink.targets import build_target

logger = logging.getLogger("doubleshrink")

stderr = Console(stderr=True)

DEFAULT_CURVE_POINTS = 99
THREADS_ENV = "DOUBLESHRINK_THREADS"


def version_callback(value: bool) -> None:
    """Print version and exit."""
    if value:
        typer.echo(f"doubleshrink version {__version__}")
        raise typer.Exit()


def configure_logging(verbosity: int) -> None:
    """Route package logs to stderr through rich; -v for INFO, -vv for DEBUG."""
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    handler = RichHandler(console=stderr, show_path=False, show_time=verbosity >= 2)
    logger.handlers = [handler]
    logger.setLevel(level)
    logger.propagate = False


app = typer.Typer(
    name="doubleshrink",
    help="Double shrinkage estimation of the global minimum variance portfolio.",
    no_args_is_help=True,
)


@app.callback()
def main_callback(
    version: bool = typer.Option(
        False,
        "--version",
        "-V",
        callback=version_callback,
        is_eager=True,
        help="Show version and exit.",
    ),
    verbose: int = typer.Option(
        0, "--verbose", "-v", count=True, help="Increase log verbosity (-v, -vv)."
    ),
) -> None:
    """doubleshrink - Ridge plus linear shrinkage of GMV portfolio weights."""
    configure_logging(verbose)


def fail(error: DoubleShrinkError) -> NoReturn:
    """Report an error and exit with its code (2 for input, 3 for numerical)."""
    typer.echo(f"Error: {error}", err=True)
    raise typer.Exit(error.exit_code)


def load_settings(config_path: Optional[Path], **overrides: Any) -> RunConfig:
    """Merge settings: command-line flags over the config file over defaults.

    Raises:
        ConfigError: If the file or a flag value is invalid.
    """
    base = data_manager.load_run_config(config_path) if config_path else RunConfig()
    updates = {key: value for key, value in overrides.items() if value is not None}
    try:
        return RunConfig.model_validate({**base.model_dump(), **updates})
    except ValidationError as e:
        raise ConfigError(f"Invalid option: {e}") from e


def resolve_threads(settings: RunConfig) -> int:
    """Thread count from flag or config, then DOUBLESHRINK_THREADS, else all cores.

    Raises:
        ConfigError: If the environment variable is not a positive integer.
    """
    if settings.threads:
        return settings.threads
    text = os.environ.get(THREADS_ENV, "").strip()
    if text:
        try:
            threads = int(text)
        except ValueError:
            threads = 0
        if threads < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{text}'")
        return threads
    return os.cpu_count() or 1


CONFIG_OPTION = typer.Option(None, "--config", "-c", help="JSON run configuration file.")
TARGET_OPTION = typer.Option(
    None, "--target", "-t", help="Target portfolio: ew, ec or custom:<csv>."
)
FORMAT_OPTION = typer.Option(None, "--format", "-f", help="Table output format: csv or json.")
OUTPUT_OPTION = typer.Option(Path("."), "--output-dir", "-o", help="Directory for output files.")
GRID_OPTION = typer.Option(None, "--lambda-grid", help="Number of lambda grid points (>= 16).")
CLAMP_OPTION = typer.Option(None, "--clamp-psi/--no-clamp-psi", help="Clip psi to [0, 1].")
THREADS_OPTION = typer.Option(
    None, "--threads", help=f"Worker threads (default: config, then {THREADS_ENV}, then all cores)."
)
SEED_OPTION = typer.Option(None, "--seed", help="Base random seed.")


@app.command()
def fit(
    input_path: Path = typer.Option(..., "--input", "-i", help="Date-major returns CSV."),
    output_dir: Path = OUTPUT_OPTION,
    target: Optional[str] = TARGET_OPTION,
    lambda_grid: Optional[int] = GRID_OPTION,
    lam: Optional[float] = typer.Option(
        None, "--lambda", help="Fix lambda instead of searching; 1 gives the BPS portfolio."
    ),
    clamp_psi: Optional[bool] = CLAMP_OPTION,
    output_format: Optional[str] = FORMAT_OPTION,
    config: Optional[Path] = CONFIG_OPTION,
) -> None:
    """Fit the double shrinkage GMV portfolio on a returns file."""
    try:
        settings = load_settings(
            config,
            target=target,
            grid_size=lambda_grid,
            clamp_psi=clamp_psi,
            output_format=output_format,
        )
        panel = data_manager.ingest_returns(input_path)
        sample = sample_covariance(panel)
        spec = data_manager.resolve_target(settings.target)
        b = build_target(spec, sample, panel.asset_labels)
        options = settings.estimator_options()
        if lam is None:
            solution = optimize_lambda(sample, b, options)
        else:
            solution = fit_at_lambda(sample, b, lam, clamp_psi=options.clamp_psi)

        out = data_manager.ensure_output_dir(output_dir)
        weights_path = data_manager.write_weights(
            solution.final_weights, panel.asset_labels, out / "weights", settings.output_format
        )
        record = SolutionRecord(
            p=panel.p,
            n=panel.n,
            concentration=panel.concentration,
            target=spec.kind,
            lambda_star=solution.lambda_star,
            psi_star=solution.psi_star,
            loss=solution.loss,
            loss_in_range=solution.loss_in_range,
            clamp_psi=options.clamp_psi,
            kernels=solution.kernels.as_dict(),
            diagnostics=solution.diagnostics,
            skipped_lambdas=list(solution.skipped_lambdas),
        )
        solution_path = data_manager.write_record(record, out / "solution.json")
    except DoubleShrinkError as e:
        fail(e)

    typer.echo(
        f"lambda* = {solution.lambda_star:.6f}  psi* = {solution.psi_star:.6f}  "
        f"loss = {solution.loss:.6f}"
    )
    typer.echo(f"Wrote {weights_path} and {solution_path}.")


@app.command("loss-curve")
def loss_curve_command(
    input_path: Optional[Path] = typer.Option(
        None, "--input", "-i", help="Returns CSV (bona fide curve only)."
    ),
    scenario: Optional[Scenario] = typer.Option(
        None, "--scenario", "-s", help="Simulate a panel instead; adds oracle columns."
    ),
    p: Optional[int] = typer.Option(None, "--p", help="Assets of the simulated panel."),
    n: Optional[int] = typer.Option(None, "--n", help="Observations of the simulated panel."),
    seed: Optional[int] = SEED_OPTION,
    points: int = typer.Option(
        DEFAULT_CURVE_POINTS,
        "--lambda-grid",
        min=1,
        help="Number of points k; lambda = i/(k+1), i = 1..k.",
    ),
    output_dir: Path = OUTPUT_OPTION,
    target: Optional[str] = TARGET_OPTION,
    output_format: Optional[str] = FORMAT_OPTION,
    config: Optional[Path] = CONFIG_OPTION,
) -> None:
    """Tabulate the bona fide loss and psi over a lambda grid."""
    try:
        if (input_path is None) == (scenario is None):
            raise InvalidParameterError(
                "source", None, "exactly one of --input or --scenario"
            )
        settings = load_settings(
            config,
            scenario=scenario,
            target=target,
            p=p,
            n=n,
            seed=seed,
            output_format=output_format,
        )
        sigma = None
        if input_path is not None:
            panel = data_manager.ingest_returns(input_path)
        else:
            rng = np.random.default_rng(settings.seed)
            model = draw_model(settings.scenario, settings.p, rng)
            panel = generate_panel(model, settings.n, settings.burn_in, rng)
            sigma = model.unconditional_sigma
        sample = sample_covariance(panel)
        b = build_target(data_manager.resolve_target(settings.target), sample, panel.asset_labels)
        curve = loss_curve(sample, b, uniform_lambda_grid(points), sigma=sigma)

        columns = ["lam", "eta", "bona_fide_loss", "psi_hat"]
        if sigma is not None:
            columns += ["oracle_loss", "oracle_psi", "finite_sample_loss", "finite_sample_psi"]
        columns.append("degenerate")
        frame = pd.DataFrame([{c: getattr(point, c) for c in columns} for point in curve])
        frame = frame.rename(columns={"lam": "lambda"})
        out = data_manager.ensure_output_dir(output_dir)
        path = data_manager.write_table(frame, out / "loss_curve", settings.output_format)
    except DoubleShrinkError as e:
        fail(e)

    degenerate = int(frame["degenerate"].sum())
    typer.echo(f"Wrote {len(curve)} points to {path} ({degenerate} degenerate).")


@app.command()
def simulate(
    scenario: Optional[Scenario] = typer.Option(
        None, "--scenario", "-s", help="Data-generating process."
    ),
    p: Optional[int] = typer.Option(None, "--p", help="Number of assets."),
    n: Optional[int] = typer.Option(None, "--n", help="Observations per replication."),
    replications: Optional[int] = typer.Option(
        None, "--replications", "-r", help="Monte Carlo replications."
    ),
    preset: Optional[str] = typer.Option(
        None, "--preset", help="Run a named grid instead of one cell: ci, desk or full."
    ),
    strategies: Optional[List[StrategyName]] = typer.Option(
        None, "--strategy", help="Strategy to evaluate (repeatable)."
    ),
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    output_dir: Path = OUTPUT_OPTION,
    target: Optional[str] = TARGET_OPTION,
    lambda_grid: Optional[int] = GRID_OPTION,
    clamp_psi: Optional[bool] = CLAMP_OPTION,
    output_format: Optional[str] = FORMAT_OPTION,
    config: Optional[Path] = CONFIG_OPTION,
) -> None:
    """Run the relative-loss simulation experiment."""
    try:
        settings = load_settings(
            config,
            scenario=scenario,
            p=p,
            n=n,
            replications=replications,
            strategies=strategies or None,
            seed=seed,
            threads=threads,
            target=target,
            grid_size=lambda_grid,
            clamp_psi=clamp_psi,
            output_format=output_format,
        )
        base = settings.scenario_config(data_manager.resolve_target(settings.target))
        cells = preset_configs(preset, base) if preset else [base]
        workers = resolve_threads(settings)

        frames = []
        summaries: List[ExperimentSummary] = []
        with Progress(
            TextColumn("{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            console=stderr,
            transient=True,
        ) as progress:
            for cell in cells:
                task = progress.add_task(
                    f"{cell.scenario.value} p={cell.p} n={cell.n}", total=cell.replications
                )
                result = run_relative_loss_experiment(
                    cell, workers, lambda k, task=task: progress.advance(task, k)
                )
                frames.append(result.to_frame())
                summaries.append(result.summary())

        out = data_manager.ensure_output_dir(output_dir)
        path = data_manager.write_table(
            pd.concat(frames, ignore_index=True), out / "relative_loss", settings.output_format
        )
        summary_path = data_manager.write_summaries(summaries, out / "summary.json")
    except DoubleShrinkError as e:
        fail(e)

    for summary in summaries:
        print_summary(summary)
    typer.echo(f"Wrote {path} and {summary_path}.")


def print_summary(summary: ExperimentSummary) -> None:
    """Render one experiment cell as a table of relative-loss statistics."""
    table = Table(
        title=(
            f"{summary.scenario.value}  p={summary.p}  n={summary.n}  "
            f"c={summary.concentration:.3g}"
        )
    )
    for column in ("strategy", "mean", "median", "q05", "q95", "failures"):
        table.add_column(column, justify="left" if column == "strategy" else "right")
    for name, stats in summary.strategies.items():
        values = (stats.mean, stats.median, stats.q05, stats.q95)
        table.add_row(
            name, *(f"{v:.4f}" if v is not None else "-" for v in values), str(stats.failures)
        )
    Console().print(table)


@app.command()
def backtest(
    input_path: Path = typer.Option(..., "--input", "-i", help="Date-major CSV of simple returns."),
    window: Optional[int] = typer.Option(None, "--window", "-w", help="Estimation window length."),
    rebalance_every: Optional[int] = typer.Option(
        None, "--rebalance-every", help="Periods between rebalances."
    ),
    strategies: Optional[List[StrategyName]] = typer.Option(
        None, "--strategy", help="Strategy to backtest (repeatable)."
    ),
    weights_log: bool = typer.Option(
        False, "--weights-log", help="Also write the weights chosen at every rebalance."
    ),
    threads: Optional[int] = THREADS_OPTION,
    output_dir: Path = OUTPUT_OPTION,
    target: Optional[str] = TARGET_OPTION,
    lambda_grid: Optional[int] = GRID_OPTION,
    clamp_psi: Optional[bool] = CLAMP_OPTION,
    output_format: Optional[str] = FORMAT_OPTION,
    config: Optional[Path] = CONFIG_OPTION,
) -> None:
    """Run a rolling-window out-of-sample backtest."""
    try:
        settings = load_settings(
            config,
            window=window,
            rebalance_every=rebalance_every,
            strategies=strategies or None,
            threads=threads,
            target=target,
            grid_size=lambda_grid,
            clamp_psi=clamp_psi,
            output_format=output_format,
        )
        panel = data_manager.ingest_returns(input_path)
        backtest_config = settings.backtest_config(
            data_manager.resolve_target(settings.target), weights_log
        )
        report = run_backtest(panel, backtest_config, resolve_threads(settings))

        out = data_manager.ensure_output_dir(output_dir)
        metrics_path = data_manager.write_table(
            report.to_frame(), out / "metrics", settings.output_format
        )
        data_manager.write_record(report.summary(), out / "backtest.json")
        if backtest_config.transaction_log:
            for name, strategy in report.strategies.items():
                frame = pd.DataFrame(
                    strategy.weight_history, columns=list(panel.asset_labels)
                )
                frame.insert(0, "date", strategy.rebalance_times)
                data_manager.write_table(frame, out / f"weights_{name}", settings.output_format)
    except DoubleShrinkError as e:
        fail(e)

    for name, strategy in report.strategies.items():
        sharpe = strategy.sharpe
        typer.echo(
            f"{name:<12} sigma={strategy.sigma:.6f}  mean={strategy.mean:.6f}  "
            f"sharpe={sharpe:.4f}  turnover={strategy.turnover:.3f}  "
            f"failed={len(strategy.failed_windows)}"
        )
    typer.echo(f"Wrote {metrics_path} and {out / 'backtest.json'}.")


def main() -> None:
    """Entry point for the CLI."""
    app()


if __name__ == "__main__":
    main()
