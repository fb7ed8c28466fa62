"""Exception hierarchy for commodity-nash."""

from __future__ import annotations

from pathlib import Path


class CommodityNashError(Exception):
    """Base class for every error raised by the package."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class ConfigError(CommodityNashError):
    """Invalid parameters or configuration input."""


class ConstraintViolation(ConfigError):
    """A model parameter breaks one of its invariants."""

    def __init__(
        self,
        field: str,
        reason: str,
        violations: tuple[tuple[str, str], ...] = (),
    ) -> None:
        self.field = field
        self.reason = reason
        # every failed invariant, first one included
        self.violations = violations or ((field, reason),)
        super().__init__(f"{field}: {reason}")


class ConfigFileError(ConfigError):
    """A configuration file line could not be parsed."""

    def __init__(self, path: Path | str, line: int, reason: str) -> None:
        self.path = Path(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{self.path}:{line}: {reason}")


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


class SolverError(CommodityNashError):
    """A numerical solve could not produce a certified answer."""

    lam: float | None = None

    def tagged(self, lam: float) -> SolverError:
        """Attach the contract quantity the failing solve was run at."""
        self.lam = lam
        return self


class BlowUp(SolverError):
    """Riccati solution exceeded the magnitude guard (T >= T_max)."""

    def __init__(self, t_star: float, magnitude: float) -> None:
        self.t_star = t_star
        self.magnitude = magnitude
        super().__init__(f"Riccati blow-up near t={t_star:.6g} (|entry|={magnitude:.3g})")


class A2Violation(SolverError):
    """Volatility-control denominator is not positive at some node."""

    def __init__(self, player: str, t_star: float, margin: float) -> None:
        self.player = player
        self.t_star = t_star
        self.margin = margin
        super().__init__(f"(A2) fails for {player} at t={t_star:.6g}: margin={margin:.6g}")


class GridParity(SolverError):
    """Composite Simpson quadrature needs an even number of steps."""

    def __init__(self, n_steps: int) -> None:
        self.n_steps = n_steps
        super().__init__(f"Simpson quadrature needs even n_steps, got {n_steps}")


class RequiresCertifiedSolution(SolverError):
    """The Riccati solution was not certified against (A2)."""


class NoSignChange(SolverError):
    """The agreement gap keeps one sign over the search bracket."""

    def __init__(self, lo: float, hi: float, g_lo: float, g_hi: float) -> None:
        self.lo = lo
        self.hi = hi
        self.g_lo = g_lo
        self.g_hi = g_hi
        super().__init__(
            f"no sign change of F_c - F_p on [{lo:.6g}, {hi:.6g}] "
            f"(g(lo)={g_lo:.6g}, g(hi)={g_hi:.6g})"
        )


class DegenerateAgreement(SolverError):
    """Prices agree for every quantity in the bracket."""

    def __init__(self, lo: float, hi: float) -> None:
        self.lo = lo
        self.hi = hi
        super().__init__(f"price agreement for all lambda in [{lo:.6g}, {hi:.6g}]")


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


class SimulationError(CommodityNashError):
    """Monte Carlo simulation could not run."""


class SimConfigError(SimulationError):
    """Invalid simulation configuration."""
