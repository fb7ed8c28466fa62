"""Indifference prices and the agreement quantity of the forward contract.

The producer's indifference price for ``lam`` units is
``F_p = J_p(0, 0) - J_p(lam, 0)`` and the consumer's
``F_c = J_c(lam, 0) - J_c(0, 0)`` (payoffs are affine in ``F``).  The agreement
quantity ``lam*`` is the nonzero root of ``g(lam) = F_c - F_p``, located by a
geometric sign scan followed by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import structlog
from scipy.optimize import root_scalar

from commodity_nash.config import SolverSettings, get_settings
from commodity_nash.equilibrium import EquilibriumReport, solve_equilibrium
from commodity_nash.errors import (
    ConfigError,
    DegenerateAgreement,
    NoSignChange,
    SolverError,
)
from commodity_nash.grid import TimeGrid
from commodity_nash.model import ValidatedParams
from commodity_nash.riccati import LambdaFamily

logger = structlog.get_logger()

MIN_BRACKET_LO = 1e-3


@dataclass(frozen=True, slots=True)
class Bracket:
    """Search interval for the agreement quantity."""

    lo: float = MIN_BRACKET_LO
    hi: float = 50.0

    def __post_init__(self) -> None:
        if not self.lo >= MIN_BRACKET_LO:
            raise ConfigError(f"bracket lo must be >= {MIN_BRACKET_LO}, got {self.lo}")
        if not self.hi > self.lo:
            raise ConfigError(f"bracket hi must exceed lo, got [{self.lo}, {self.hi}]")

    @classmethod
    def from_settings(cls, settings: SolverSettings) -> Bracket:
        return cls(settings.bracket_lo, settings.bracket_hi)


class AgreementProblem:
    """Equilibria of one parameter set as the contract quantity varies.

    Holds the no-contract baseline and a :class:`LambdaFamily`, so every
    evaluation only integrates the contract-dependent Riccati system and the
    moments.  Reports are cached by quantity.
    """

    def __init__(
        self,
        params: ValidatedParams,
        grid: TimeGrid,
        *,
        threshold: float = 1e8,
    ) -> None:
        self.params = params.replace(lam=0.0, F=0.0)
        self.grid = grid
        self.threshold = threshold
        try:
            self.family = LambdaFamily(self.params, grid, threshold=threshold)
            self.baseline = solve_equilibrium(self.params, grid, family=self.family)
        except SolverError as exc:
            raise exc.tagged(0.0) from None
        self._cache: dict[float, EquilibriumReport] = {0.0: self.baseline}

    @classmethod
    def from_settings(
        cls, params: ValidatedParams, settings: SolverSettings | None = None
    ) -> AgreementProblem:
        settings = settings or get_settings()
        return cls(
            params,
            TimeGrid(params.T, settings.n_steps),
            threshold=settings.blow_up_threshold,
        )

    def report(self, lam: float, F: float = 0.0) -> EquilibriumReport:
        """Equilibrium at contract ``(lam, F)``.

        Raises:
            SolverError: tagged with *lam*.
        """
        lam = float(lam)
        if F == 0.0 and lam in self._cache:
            return self._cache[lam]
        try:
            report = solve_equilibrium(
                self.params.replace(lam=lam, F=F), self.grid, family=self.family
            )
        except SolverError as exc:
            raise exc.tagged(lam) from None
        if F == 0.0:
            self._cache[lam] = report
        return report

    def indifference(self, lam: float) -> tuple[float, float]:
        """``(F_p, F_c)`` at quantity *lam*."""
        at_lam = self.report(lam)
        f_p = self.baseline.J_p_star - at_lam.J_p_star
        f_c = at_lam.J_c_star - self.baseline.J_c_star
        return f_p, f_c

    def gap(self, lam: float) -> float:
        f_p, f_c = self.indifference(lam)
        return f_c - f_p


def indifference_prices(
    p: ValidatedParams,
    lam: float,
    *,
    settings: SolverSettings | None = None,
) -> tuple[float, float]:
    """``(F_p, F_c)`` for *lam* units, F pinned to zero in both solves."""
    return AgreementProblem.from_settings(p, settings).indifference(lam)


def agreement_gap(problem: AgreementProblem, lam: float) -> float:
    return problem.gap(lam)


def trading_feasible(
    params: ValidatedParams,
    lam: float,
    *,
    settings: SolverSettings | None = None,
) -> bool:
    """Whether the producer's price does not exceed the consumer's, ``F_p <= F_c``."""
    f_p, f_c = indifference_prices(params, lam, settings=settings)
    return f_p <= f_c


def agreement_identity(problem: AgreementProblem, lam: float) -> tuple[float, float]:
    """Both sides of the reduced agreement equation.

    ``2 h_1(0) q0 + 2 h_2(0) c0 + R_c(0) + R_p(0)`` at quantity 0 and at *lam*;
    they coincide exactly when *lam* is an agreement quantity.
    """
    return problem.baseline.reduced_sum, problem.report(lam).reduced_sum


# ---------------------------------------------------------------------------
# Agreement search
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class AgreementResult:
    """Agreement quantity, price and the premium over the expected spot price."""

    lambda_star: float
    F_star: float
    unit_price: float
    expected_spot_T: float
    risk_premium: float
    bracket_used: tuple[float, float]
    residual: float
    expected_spot_T_no_contract: float
    J_p_at_agreement: float
    J_c_at_agreement: float
    extra_brackets: tuple[tuple[float, float], ...] = field(default=())

    def as_row(self) -> dict[str, Any]:
        return {
            "lambda_star": self.lambda_star,
            "F_star": self.F_star,
            "unit_price": self.unit_price,
            "E_S_T": self.expected_spot_T,
            "risk_premium": self.risk_premium,
            "E_S_T_no_contract": self.expected_spot_T_no_contract,
            "J_p_at_agreement": self.J_p_at_agreement,
            "J_c_at_agreement": self.J_c_at_agreement,
            "residual": self.residual,
            "bracket_lo": self.bracket_used[0],
            "bracket_hi": self.bracket_used[1],
        }


@dataclass(frozen=True, slots=True)
class ScanPoint:
    lam: float
    gap: float = math.nan
    F_c: float = math.nan
    error: SolverError | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def scan_gap(problem: AgreementProblem, lams: np.ndarray) -> list[ScanPoint]:
    """Evaluate ``g`` at each quantity; failing points are kept with their error."""
    points = []
    for lam in lams:
        try:
            f_p, f_c = problem.indifference(float(lam))
        except SolverError as exc:
            logger.warning("scan_point_failed", lam=float(lam), error=str(exc))
            points.append(ScanPoint(float(lam), error=exc))
            continue
        points.append(ScanPoint(float(lam), f_c - f_p, F_c=f_c))
    return points


def _sign_changes(points: list[ScanPoint]) -> list[tuple[float, float]]:
    usable = [pt for pt in points if pt.ok]
    brackets = []
    for left, right in zip(usable, usable[1:], strict=False):
        if left.gap == 0.0:
            brackets.append((left.lam, left.lam))
        elif left.gap * right.gap < 0:
            brackets.append((left.lam, right.lam))
    if usable and usable[-1].gap == 0.0:
        brackets.append((usable[-1].lam, usable[-1].lam))
    return brackets


def find_lambda_star(
    p: ValidatedParams,
    search: Bracket | None = None,
    *,
    settings: SolverSettings | None = None,
    problem: AgreementProblem | None = None,
) -> AgreementResult:
    """Locate the nonzero agreement quantity inside *search*.

    ``g`` is sampled on a geometric grid of ``settings.scan_points`` quantities
    and the first sign change is bisected until the bracket is narrower than
    ``settings.bisection_rel_width`` relative to the root.  Scan points whose
    solve fails are logged and skipped.  When several sign changes show up the
    smallest root wins and the others are kept on the result as
    ``extra_brackets``.  A root whose residual exceeds ``price_rel_tol`` is still
    returned, with a warning.

    The price is the producer's indifference price at the root, and the payoffs
    at the agreement follow from it without another solve.

    Raises:
        NoSignChange: ``g`` keeps one sign over the bracket.
        DegenerateAgreement: ``|g|`` is below tolerance at every scan point.
        SolverError: the baseline solve failed, or every scan point failed.
    """
    settings = settings or get_settings()
    search = search or Bracket.from_settings(settings)
    problem = problem or AgreementProblem.from_settings(p, settings)
    tol_scale = settings.price_rel_tol

    lams = np.geomspace(search.lo, search.hi, settings.scan_points)
    points = scan_gap(problem, lams)
    usable = [pt for pt in points if pt.ok]
    if not usable:
        first = points[0].error
        assert first is not None
        raise first

    if all(abs(pt.gap) <= tol_scale * (1.0 + abs(pt.F_c)) for pt in usable):
        logger.warning("degenerate_agreement", lo=search.lo, hi=search.hi)
        raise DegenerateAgreement(search.lo, search.hi)

    brackets = _sign_changes(points)
    if not brackets:
        raise NoSignChange(search.lo, search.hi, usable[0].gap, usable[-1].gap)
    if len(brackets) > 1:
        logger.warning("multiple_roots", brackets=brackets, chosen=brackets[0])

    lo, hi = brackets[0]
    if lo == hi:
        lam_star = lo
    else:
        sol = root_scalar(
            problem.gap,
            bracket=(lo, hi),
            method="bisect",
            xtol=1e-300,
            rtol=settings.bisection_rel_width,
        )
        lam_star = float(sol.root)

    f_p, f_c = problem.indifference(lam_star)
    residual = abs(f_c - f_p)
    if residual > tol_scale * (1.0 + abs(f_c)):
        logger.warning("agreement_residual_above_tolerance", lam=lam_star, residual=residual)

    at_star = problem.report(lam_star)
    unit_price = f_p / lam_star
    spot_T = at_star.expected_spot_T
    result = AgreementResult(
        lambda_star=lam_star,
        F_star=f_p,
        unit_price=unit_price,
        expected_spot_T=spot_T,
        risk_premium=unit_price - spot_T,
        bracket_used=(search.lo, search.hi),
        residual=residual,
        expected_spot_T_no_contract=problem.baseline.expected_spot_T,
        J_p_at_agreement=at_star.J_p_star + f_p,
        J_c_at_agreement=at_star.J_c_star - f_p,
        extra_brackets=tuple(brackets[1:]),
    )
    logger.info(
        "agreement_found",
        lambda_star=lam_star,
        F_star=f_p,
        unit_price=unit_price,
        premium=result.risk_premium,
        residual=residual,
    )
    return result


@dataclass(frozen=True, slots=True)
class PremiumRow:
    eta_p: float
    eta_c: float
    l_p: float
    l_c: float
    lambda_star: float
    F_star: float
    unit_price: float
    expected_spot_T: float
    premium: float

    def as_row(self) -> dict[str, float]:
        return {
            "eta_p": self.eta_p,
            "eta_c": self.eta_c,
            "l_p": self.l_p,
            "l_c": self.l_c,
            "lambda_star": self.lambda_star,
            "F_star": self.F_star,
            "unit_price": self.unit_price,
            "E_S_T": self.expected_spot_T,
            "premium": self.premium,
        }


def risk_premium_report(res: AgreementResult, p: ValidatedParams) -> PremiumRow:
    """Unit agreement price against ``E[S_T]`` under the agreed contract."""
    return PremiumRow(
        eta_p=p.eta_p,
        eta_c=p.eta_c,
        l_p=p.l_p,
        l_c=p.l_c,
        lambda_star=res.lambda_star,
        F_star=res.F_star,
        unit_price=res.unit_price,
        expected_spot_T=res.expected_spot_T,
        premium=res.unit_price - res.expected_spot_T,
    )
