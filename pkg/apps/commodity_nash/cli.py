"""commodity-nash CLI: equilibrium, agreement price, Monte Carlo checks and sweeps."""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Any, NoReturn

import typer
from pydantic import ValidationError
from rich.console import Console

from commodity_nash.config import RunConfig, get_settings, load_run_config
from commodity_nash.equilibrium import payoff_breakdown, solve_equilibrium
from commodity_nash.errors import CommodityNashError, ConfigError, SolverError
from commodity_nash.grid import TimeGrid
from commodity_nash.logs import configure_logging
from commodity_nash.montecarlo import SimConfig, deviation_test, validate
from commodity_nash.pricing import (
    AgreementProblem,
    Bracket,
    find_lambda_star,
    risk_premium_report,
)
from commodity_nash.reporters.csv_reporter import CsvReporter
from commodity_nash.reporters.terminal import TerminalReporter
from commodity_nash.sweep import load_sweep_spec, run_sweep
from commodity_nash.types import Gain, Player

app = typer.Typer(
    name="commodity-nash",
    help="Nash equilibrium and forward agreement solver for the producer/consumer commodity game.",
    no_args_is_help=True,
    rich_markup_mode="rich",
)
console = Console()
err_console = Console(stderr=True)

EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_MC = 3

# ---------------------------------------------------------------------------
# Shared option types
# ---------------------------------------------------------------------------

OptConfig = Annotated[
    Path | None,
    typer.Option(
        "--config", "-c", help="Parameter file (default: commodity-nash.cfg in cwd or above)"
    ),
]
OptLambda = Annotated[float | None, typer.Option("--lambda", help="Contract quantity")]
OptF = Annotated[float | None, typer.Option("--F", help="Contract cash amount")]
OptEtaP = Annotated[float | None, typer.Option("--eta-p", help="Producer risk aversion")]
OptEtaC = Annotated[float | None, typer.Option("--eta-c", help="Consumer risk aversion")]
OptEllP = Annotated[float | None, typer.Option("--ell-p", help="Producer volatility-control cost")]
OptEllC = Annotated[float | None, typer.Option("--ell-c", help="Consumer volatility-control cost")]
OptSteps = Annotated[int | None, typer.Option("--steps", help="Riccati / moment grid steps")]
OptBracket = Annotated[
    str | None, typer.Option("--bracket", help="Agreement search bracket 'lo,hi'")
]
OptSeed = Annotated[int | None, typer.Option("--seed", help="Monte Carlo seed")]
OptPaths = Annotated[int | None, typer.Option("--paths", help="Monte Carlo paths")]
OptMcSteps = Annotated[int | None, typer.Option("--mc-steps", help="Monte Carlo time steps")]
OptWorkers = Annotated[int | None, typer.Option("--workers", "-w", help="Parallel workers")]
OptOut = Annotated[Path | None, typer.Option("--out", "-o", help="Output directory for CSV files")]
OptVerbose = Annotated[bool, typer.Option("--verbose", "-v", help="Enable debug logging")]
OptLogJson = Annotated[bool, typer.Option("--log-json", help="Log JSON lines to stderr")]


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _setup_logging(verbose: bool, log_json: bool) -> None:
    configure_logging(verbose=verbose, json_output=log_json, level=get_settings().log_level)


def _parse_bracket(value: str | None) -> dict[str, float | None]:
    if value is None:
        return {"bracket_lo": None, "bracket_hi": None}
    lo, sep, hi = value.partition(",")
    try:
        if not sep:
            raise ValueError
        return {"bracket_lo": float(lo), "bracket_hi": float(hi)}
    except ValueError:
        raise ConfigError(f"--bracket expects 'lo,hi', got {value!r}") from None


def _fail(exc: CommodityNashError | ValidationError) -> NoReturn:
    """Exit 2 for solver errors, 1 for everything else."""
    if isinstance(exc, SolverError):
        at = f" (lambda={exc.lam:g})" if exc.lam is not None else ""
        err_console.print(f"[red]✗ solver error{at}:[/red] {exc}")
        raise typer.Exit(code=EXIT_SOLVER) from exc
    err_console.print(f"[red]✗ configuration error:[/red] {exc}")
    raise typer.Exit(code=EXIT_CONFIG) from exc


def _load(
    config: Path | None,
    *,
    params: dict[str, float | None],
    settings: dict[str, Any],
) -> RunConfig:
    return load_run_config(config, param_overrides=params, setting_overrides=settings)


def _sim_config(run: RunConfig) -> SimConfig:
    s = run.settings
    return SimConfig(
        n_paths=s.mc_paths,
        n_time_steps=s.mc_time_steps,
        seed=s.mc_seed,
        chunk_size=s.mc_chunk_size,
        workers=s.workers,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@app.command()
def solve(
    config: OptConfig = None,
    lam: OptLambda = None,
    F: OptF = None,
    eta_p: OptEtaP = None,
    eta_c: OptEtaC = None,
    ell_p: OptEllP = None,
    ell_c: OptEllC = None,
    steps: OptSteps = None,
    out: OptOut = None,
    verbose: OptVerbose = False,
    log_json: OptLogJson = False,
) -> None:
    """Solve the equilibrium at a given contract (lambda, F)."""
    _setup_logging(verbose, log_json)
    try:
        run = _load(
            config,
            params={"lam": lam, "F": F, "eta_p": eta_p, "eta_c": eta_c, "l_p": ell_p, "l_c": ell_c},
            settings={"n_steps": steps},
        )
        p = run.params
        grid = TimeGrid(p.T, run.settings.n_steps)
        report = solve_equilibrium(p, grid, threshold=run.settings.blow_up_threshold)
    except (CommodityNashError, ValidationError) as exc:
        _fail(exc)

    breakdown = payoff_breakdown(p, report.riccati, report.policy, report.moments)
    TerminalReporter(console=console).equilibrium(report, breakdown)
    if out is not None:
        CsvReporter(out / "equilibrium.csv").emit([report.as_row()])
        path = report.moments.to_csv(out / "moments.csv", report.policy)
        err_console.print(f"[green]CSV written to[/green] {path}")


@app.command()
def price(
    config: OptConfig = None,
    eta_p: OptEtaP = None,
    eta_c: OptEtaC = None,
    ell_p: OptEllP = None,
    ell_c: OptEllC = None,
    steps: OptSteps = None,
    bracket: OptBracket = None,
    out: OptOut = None,
    verbose: OptVerbose = False,
    log_json: OptLogJson = False,
) -> None:
    """Find the agreement quantity lambda* and price F*, and the risk premium."""
    _setup_logging(verbose, log_json)
    try:
        run = _load(
            config,
            params={"eta_p": eta_p, "eta_c": eta_c, "l_p": ell_p, "l_c": ell_c},
            settings={"n_steps": steps, **_parse_bracket(bracket)},
        )
        result = find_lambda_star(
            run.params, Bracket.from_settings(run.settings), settings=run.settings
        )
    except (CommodityNashError, ValidationError) as exc:
        _fail(exc)

    TerminalReporter(console=console).agreement(result)
    if out is not None:
        CsvReporter(out / "premium.csv").emit([risk_premium_report(result, run.params).as_row()])


@app.command(name="mc-validate")
def mc_validate(
    config: OptConfig = None,
    lam: OptLambda = None,
    F: OptF = None,
    eta_p: OptEtaP = None,
    eta_c: OptEtaC = None,
    ell_p: OptEllP = None,
    ell_c: OptEllC = None,
    steps: OptSteps = None,
    seed: OptSeed = None,
    paths: OptPaths = None,
    mc_steps: OptMcSteps = None,
    workers: OptWorkers = None,
    at_indifference: Annotated[
        bool,
        typer.Option(
            "--at-indifference", help="Use the producer's indifference price as F"
        ),
    ] = False,
    deviate: Annotated[
        Gain | None, typer.Option("--deviate", help="Feedback coefficient to perturb")
    ] = None,
    deviator: Annotated[
        Player, typer.Option("--deviator", help="Player whose coefficient is perturbed")
    ] = Player.PRODUCER,
    epsilons: Annotated[
        str, typer.Option("--epsilons", help="Comma-separated perturbation sizes")
    ] = "-0.05,0,0.05",
    out: OptOut = None,
    verbose: OptVerbose = False,
    log_json: OptLogJson = False,
) -> None:
    """Check the equilibrium against a Monte Carlo simulation (exit 3 on failure)."""
    _setup_logging(verbose, log_json)
    try:
        run = _load(
            config,
            params={"lam": lam, "F": F, "eta_p": eta_p, "eta_c": eta_c, "l_p": ell_p, "l_c": ell_c},
            settings={
                "n_steps": steps,
                "mc_seed": seed,
                "mc_paths": paths,
                "mc_time_steps": mc_steps,
                "workers": workers,
            },
        )
        try:
            eps = [float(e) for e in epsilons.split(",")]
        except ValueError:
            raise ConfigError(f"--epsilons expects numbers, got {epsilons!r}") from None
        p = run.params
        problem = AgreementProblem.from_settings(p, run.settings)
        F_used = problem.indifference(p.lam)[0] if at_indifference else p.F
        report = problem.report(p.lam, F_used)
        sim_cfg = _sim_config(run)
        result = validate(report, sim_cfg)
        table = None
        if deviate is not None:
            table = deviation_test(
                report.policy,
                report.moments,
                report.params,
                sim_cfg,
                eps,
                gain=deviate,
                player=deviator,
            )
    except (CommodityNashError, ValidationError) as exc:
        _fail(exc)

    reporter = TerminalReporter(console=console)
    if at_indifference:
        console.print(
            f"F set to the producer indifference price {F_used:.10g}; "
            f"reference J_p*(0,0) = {problem.baseline.J_p_star:.10g}"
        )
    reporter.validation(result)
    if table is not None:
        reporter.deviation(table)

    if out is not None:
        est = result.estimate
        CsvReporter(out / "mc_terms.csv", append=False).emit(
            [
                {"player": str(player), **terms.as_dict(), "se": se}
                for player, terms, se in (
                    (Player.PRODUCER, est.producer, est.se_p),
                    (Player.CONSUMER, est.consumer, est.se_c),
                )
            ]
        )
        if table is not None:
            CsvReporter(out / "deviations.csv", append=False).emit(
                [
                    {
                        "player": str(table.player),
                        "gain": str(table.gain),
                        "epsilon": row.epsilon,
                        "delta_J": row.delta_J,
                        "se": row.se,
                    }
                    for row in table.rows
                ]
            )

    if not result.passed or (table is not None and not table.equilibrium_is_best()):
        raise typer.Exit(code=EXIT_MC)


@app.command()
def sweep(
    spec: Annotated[Path, typer.Option("--spec", "-s", help="Sweep definition file")],
    config: OptConfig = None,
    steps: OptSteps = None,
    bracket: OptBracket = None,
    workers: OptWorkers = None,
    out: Annotated[
        Path | None, typer.Option("--out", "-o", help="CSV path (default: the sweep file's output)")
    ] = None,
    verbose: OptVerbose = False,
    log_json: OptLogJson = False,
) -> None:
    """Solve the agreement over a two-parameter grid and write a CSV."""
    _setup_logging(verbose, log_json)
    try:
        sweep_spec = load_sweep_spec(spec)
        run = _load(
            config or sweep_spec.base,
            params={},
            settings={"n_steps": steps, "workers": workers, **_parse_bracket(bracket)},
        )
        result = run_sweep(sweep_spec, run.params, run.settings)
    except (CommodityNashError, ValidationError) as exc:
        _fail(exc)

    TerminalReporter(console=console).sweep(result)
    CsvReporter(out or sweep_spec.output, append=False).emit(result.as_rows())


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

if __name__ == "__main__":
    app()
