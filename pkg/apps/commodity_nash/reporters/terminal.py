"""Rich terminal reporter for solver results."""

from __future__ import annotations

from dataclasses import dataclass, field

from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from commodity_nash.equilibrium import EquilibriumReport, PayoffBreakdown
from commodity_nash.montecarlo import DeviationTable, McValidation
from commodity_nash.pricing import AgreementResult
from commodity_nash.sweep import SweepResult
from commodity_nash.types import Player, PointStatus

_STATUS_STYLES: dict[PointStatus, tuple[str, str]] = {
    PointStatus.OK: ("✓", "green"),
    PointStatus.BLOW_UP: ("✗", "red"),
    PointStatus.A2_VIOLATION: ("✗", "red"),
    PointStatus.NO_SIGN_CHANGE: ("⚠", "yellow"),
    PointStatus.DEGENERATE: ("⚠", "yellow"),
    PointStatus.INVALID_PARAMS: ("ℹ", "blue"),
    PointStatus.SOLVER_ERROR: ("✗", "red"),
}


def _num(value: float) -> str:
    return f"{value:.10g}"


def _pass_text(passed: bool) -> Text:
    return Text("✓ pass", style="green") if passed else Text("✗ fail", style="red")


@dataclass(slots=True)
class TerminalReporter:
    console: Console = field(default_factory=Console)

    def equilibrium(
        self, report: EquilibriumReport, breakdown: PayoffBreakdown | None = None
    ) -> None:
        p = report.params
        self.console.print()
        self.console.print(
            Text.assemble(
                ("commodity-nash", "bold cyan"),
                " equilibrium at ",
                (f"lambda={_num(report.lam)}, F={_num(report.F)}", "bold"),
            )
        )
        table = Table(show_header=True, header_style="bold", show_lines=False)
        table.add_column("", style="cyan")
        table.add_column("Producer", justify="right")
        table.add_column("Consumer", justify="right")
        table.add_row("J*", _num(report.J_p_star), _num(report.J_c_star))
        table.add_row("R(0)", _num(report.R_p0), _num(report.R_c0))
        table.add_row("Ybar(0)", _num(report.Ybar_p0), _num(report.Ybar_c0))
        table.add_row(
            "min (A2) margin",
            _num(report.riccati.a2.min_margin_p),
            _num(report.riccati.a2.min_margin_c),
        )
        if breakdown is not None:
            for term in ("profit", "drift_cost", "vol_cost", "contract", "penalty", "total"):
                table.add_row(
                    term,
                    _num(breakdown.producer.as_dict()[term]),
                    _num(breakdown.consumer.as_dict()[term]),
                )
        self.console.print(table)
        self.console.print(
            f"E[S_T] = {_num(report.expected_spot_T)}   (s0 = {_num(p.s0)})"
        )
        self.console.print()

    def agreement(self, result: AgreementResult) -> None:
        premium_style = "green" if result.risk_premium >= 0 else "red"
        table = Table(box=None, show_header=False, padding=(0, 2))
        table.add_column(style="cyan")
        table.add_column(justify="right")
        table.add_row("lambda*", _num(result.lambda_star))
        table.add_row("F*", _num(result.F_star))
        table.add_row("unit price F*/lambda*", _num(result.unit_price))
        table.add_row("E[S_T] under contract", _num(result.expected_spot_T))
        table.add_row("E[S_T] without contract", _num(result.expected_spot_T_no_contract))
        table.add_row("risk premium", Text(_num(result.risk_premium), style=premium_style))
        table.add_row("J_p at agreement", _num(result.J_p_at_agreement))
        table.add_row("J_c at agreement", _num(result.J_c_at_agreement))
        table.add_row("|F_c - F_p| residual", _num(result.residual))
        self.console.print(
            Panel(table, title="Forward agreement", border_style="cyan", expand=False)
        )
        if result.extra_brackets:
            self.console.print(
                f"[yellow]⚠ {len(result.extra_brackets)} further sign change(s) in the bracket; "
                "the smallest root was kept[/yellow]"
            )

    def validation(self, result: McValidation) -> None:
        est = result.estimate
        table = Table(
            title=f"Monte Carlo ({est.n_paths} paths, {est.n_time_steps} steps)",
            title_style="bold",
            show_lines=False,
        )
        table.add_column("Check", style="cyan")
        table.add_column("Estimate", justify="right")
        table.add_column("Reference", justify="right")
        table.add_column("se", justify="right")
        table.add_column("z", justify="right")
        table.add_column("Band", justify="right")
        table.add_column("Result", justify="center")
        for check in result.checks:
            table.add_row(
                check.name,
                _num(check.estimate),
                _num(check.reference),
                f"{check.se:.3g}",
                f"{check.z_score:+.2f}",
                f"{check.band:g}",
                _pass_text(check.passed),
            )
        self.console.print(table)

        terms = Table(title="Objective terms (MC)", title_style="bold")
        terms.add_column("", style="cyan")
        terms.add_column("Producer", justify="right")
        terms.add_column("Consumer", justify="right")
        for term, value in est.producer.as_dict().items():
            terms.add_row(term, _num(value), _num(est.consumer.as_dict()[term]))
        self.console.print(terms)
        self.console.print(
            Text.assemble(
                "variance identity relative error ",
                (f"{result.identity_rel_error:.3g}", "bold"),
                "  ",
                _pass_text(result.identity_passed),
            )
        )
        self.console.print()

    def deviation(self, table: DeviationTable) -> None:
        out = Table(title=f"{table.player} deviations on {table.gain}", title_style="bold")
        out.add_column("epsilon", justify="right")
        out.add_column("ΔJ", justify="right")
        out.add_column("se", justify="right")
        out.add_column("ΔJ / se", justify="right")
        for row in table.rows:
            ratio = row.delta_J / row.se if row.se > 0 else 0.0
            style = "red" if row.delta_J > 2 * row.se else None
            out.add_row(
                f"{row.epsilon:+g}",
                Text(_num(row.delta_J), style=style or ""),
                f"{row.se:.3g}",
                f"{ratio:+.2f}",
            )
        self.console.print(out)
        verdict = table.equilibrium_is_best()
        name = "producer" if table.player is Player.PRODUCER else "consumer"
        self.console.print(
            f"[green]✓ no profitable {name} deviation[/green]"
            if verdict
            else f"[red]✗ a {name} deviation improves the payoff[/red]"
        )
        self.console.print()

    def sweep(self, result: SweepResult) -> None:
        spec = result.spec
        self.console.print(
            Text.assemble(
                ("sweep ", "bold cyan"),
                (f"{spec.axis1.name} x {spec.axis2.name}", "bold"),
                f"  {len(result.rows)} points in {result.elapsed:.1f}s",
            )
        )
        parts = []
        for status, count in result.summary.items():
            if not count:
                continue
            icon, color = _STATUS_STYLES[status]
            parts.append(f"[{color}]{icon} {count} {status}[/{color}]")
        self.console.print(" | ".join(parts))
        failed = [row for row in result.rows if not row.ok]
        if failed:
            table = Table(title="Failed points", title_style="bold red", show_lines=True)
            table.add_column(spec.axis1.name, justify="right")
            table.add_column(spec.axis2.name, justify="right")
            table.add_column("Status")
            table.add_column("Message", max_width=60)
            for row in failed[:15]:
                _, color = _STATUS_STYLES[row.status]
                table.add_row(
                    _num(row.x1), _num(row.x2), Text(str(row.status), style=color), row.message
                )
            self.console.print(table)
            if len(failed) > 15:
                self.console.print(f"[dim italic]… and {len(failed) - 15} more.[/dim italic]")
        self.console.print()
