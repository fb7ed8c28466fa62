"""Backward Riccati systems for ``pi``, ``pi_hat`` and the linear ODE for ``h``.

``pi`` and ``pi_hat`` solve non-symmetric 2x2 matrix Riccati equations with
zero terminal value; ``h`` solves a linear ODE driven by ``pi_hat``.  Blow-up of
the matrix systems (horizon beyond the existence interval) is detected with a
magnitude guard, and the positivity of the volatility-control denominators is
certified node by node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import structlog

from commodity_nash.errors import A2Violation, BlowUp
from commodity_nash.grid import FloatArray, GridFunction, TimeGrid, rk4
from commodity_nash.model import (
    CoefficientSet,
    ValidatedParams,
    build_coefficients,
    closed_form_K,
    closed_form_K_prime,
    scalar_riccati_rhs,
)
from commodity_nash.types import Player, Scalar

logger = structlog.get_logger()

DEFAULT_BLOW_UP_THRESHOLD = 1e8


def _magnitude_guard(threshold: float):
    def guard(t: float, y: FloatArray) -> None:
        magnitude = float(np.max(np.abs(y)))
        if not np.isfinite(magnitude) or magnitude > threshold:
            raise BlowUp(t, magnitude)

    return guard


def _solve_matrix_riccati(
    xi: FloatArray,
    phi_half: FloatArray,
    r_diag: FloatArray,
    grid: TimeGrid,
    threshold: float,
    name: str,
) -> GridFunction:
    """``P' = Xi + Phi P + P Phi + P R P``, ``P(T) = 0``, with diagonal ``Phi``, ``R``."""

    def rhs(s: int, P: FloatArray) -> FloatArray:
        phi = phi_half[s]
        return xi + phi[:, None] * P + P * phi[None, :] + (P * r_diag) @ P

    values, derivs = rk4(
        rhs, np.zeros((2, 2)), grid, backward=True, guard=_magnitude_guard(threshold)
    )
    return GridFunction(grid, values, derivs, (name,))


def solve_pi(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    *,
    threshold: float = DEFAULT_BLOW_UP_THRESHOLD,
) -> GridFunction:
    """Integrate the ``pi`` system backward from ``pi(T) = 0``.

    Raises:
        BlowUp: an entry exceeded *threshold* in magnitude.
    """
    phi_half = coeffs.phi_diag(grid.half_nodes)
    return _solve_matrix_riccati(coeffs.xi, phi_half, coeffs.r_diag, grid, threshold, "pi")


def solve_pi_hat(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    *,
    threshold: float = DEFAULT_BLOW_UP_THRESHOLD,
) -> GridFunction:
    """Integrate the ``pi_hat`` system backward from ``pi_hat(T) = 0``."""
    phi_half = coeffs.phi_hat_diag(grid.half_nodes)
    return _solve_matrix_riccati(
        coeffs.xi_hat, phi_half, coeffs.r_diag, grid, threshold, "pi_hat"
    )


def solve_h(
    coeffs: CoefficientSet,
    pi_hat: GridFunction,
    lam: float,
    grid: TimeGrid,
) -> GridFunction:
    """``h' = (pi_hat R + Phi_hat) h + Psi`` with ``h(T) = lam (rho_p, gamma rho_c) / 2``."""
    if pi_hat.grid != grid:
        raise ValueError("pi_hat must live on the integration grid")
    p = coeffs.params
    pih_half = pi_hat.on_half_grid()
    phih_half = coeffs.phi_hat_diag(grid.half_nodes)
    r_diag = coeffs.r_diag
    psi = coeffs.psi

    def rhs(s: int, h: FloatArray) -> FloatArray:
        return (pih_half[s] * r_diag) @ h + phih_half[s] * h + psi

    h_T = 0.5 * lam * np.array([p.rho_p, p.gamma * p.rho_c])
    values, derivs = rk4(rhs, h_T, grid, backward=True)
    return GridFunction(grid, values, derivs, ("h1", "h2"))


def integrate_scalar_K(p: ValidatedParams, grid: TimeGrid, which: Scalar) -> GridFunction:
    """Numerical counterpart of :func:`closed_form_K` on the same RK4 machinery."""

    def rhs(_s: int, k: FloatArray) -> FloatArray:
        return scalar_riccati_rhs(p, which, k)

    values, derivs = rk4(rhs, 0.0, grid, backward=True)
    return GridFunction(grid, values, derivs, (str(which),))


# ---------------------------------------------------------------------------
# Volatility-control positivity (A2)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True, eq=False)
class A2Report:
    """Volatility-control denominators ``l - 2 (K + pi_ii)`` on the grid."""

    margin_p: GridFunction
    margin_c: GridFunction

    @property
    def min_margin_p(self) -> float:
        return float(np.min(self.margin_p.values))

    @property
    def min_margin_c(self) -> float:
        return float(np.min(self.margin_c.values))

    @property
    def certified(self) -> bool:
        return self.min_margin_p > 0 and self.min_margin_c > 0

    def first_violation(self) -> A2Violation | None:
        nodes = self.margin_p.grid.nodes
        for player, margin in ((Player.PRODUCER, self.margin_p), (Player.CONSUMER, self.margin_c)):
            bad = np.flatnonzero(margin.values <= 0)
            if bad.size:
                i = int(bad[0])
                return A2Violation(str(player), float(nodes[i]), float(margin.values[i]))
        return None


def a2_margins(coeffs: CoefficientSet, pi: GridFunction) -> A2Report:
    """Evaluate both (A2) margins at every node without judging them."""
    p = coeffs.params
    t = pi.grid.nodes
    margins = []
    for which, l_weight, idx in ((Scalar.KP, p.l_p, 0), (Scalar.KC, p.l_c, 1)):
        k = closed_form_K(p, t, which)
        k_prime = closed_form_K_prime(p, t, which)
        values = l_weight - 2.0 * (k + pi.values[:, idx, idx])
        derivs = -2.0 * (k_prime + pi.derivs[:, idx, idx])
        margins.append(GridFunction(pi.grid, values, derivs, (f"margin_{'pc'[idx]}",)))
    return A2Report(margin_p=margins[0], margin_c=margins[1])


def check_A2(coeffs: CoefficientSet, pi: GridFunction) -> A2Report:
    """Certify (A2) at every node.

    Raises:
        A2Violation: for the first failing node (producer checked first).
    """
    report = a2_margins(coeffs, pi)
    if (violation := report.first_violation()) is not None:
        raise violation
    return report


# ---------------------------------------------------------------------------
# Assembled solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True, eq=False)
class RiccatiSolution:
    """``pi``, ``pi_hat``, ``h`` and the (A2) margins on one grid."""

    coeffs: CoefficientSet
    pi: GridFunction
    pi_hat: GridFunction
    h_fun: GridFunction
    a2: A2Report

    @property
    def grid(self) -> TimeGrid:
        return self.pi.grid

    @property
    def a2_margin_p(self) -> GridFunction:
        return self.a2.margin_p

    @property
    def a2_margin_c(self) -> GridFunction:
        return self.a2.margin_c

    @property
    def certified(self) -> bool:
        return self.a2.certified


def solve_riccati(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    *,
    threshold: float = DEFAULT_BLOW_UP_THRESHOLD,
    pi_hat: GridFunction | None = None,
    h_fun: GridFunction | None = None,
    require_a2: bool = True,
) -> RiccatiSolution:
    """Solve the full Riccati block, reusing *pi_hat* / *h_fun* when supplied.

    Raises:
        BlowUp: from either matrix system.
        A2Violation: when *require_a2* and a margin is not positive.
    """
    pi = solve_pi(coeffs, grid, threshold=threshold)
    if pi_hat is None:
        pi_hat = solve_pi_hat(coeffs, grid, threshold=threshold)
    if h_fun is None:
        h_fun = solve_h(coeffs, pi_hat, coeffs.params.lam, grid)
    report = check_A2(coeffs, pi) if require_a2 else a2_margins(coeffs, pi)
    logger.debug(
        "riccati_solved",
        lam=coeffs.params.lam,
        n_steps=grid.n_steps,
        pi0=pi.initial.tolist(),
        min_margin_p=report.min_margin_p,
        min_margin_c=report.min_margin_c,
    )
    return RiccatiSolution(coeffs=coeffs, pi=pi, pi_hat=pi_hat, h_fun=h_fun, a2=report)


class LambdaFamily:
    """Riccati solutions for one parameter set as the contract quantity varies.

    ``pi_hat`` does not depend on the contract or on risk aversion and ``h`` is
    affine in the quantity, so both are solved once: ``h`` from the two solves
    at quantities 0 and 1.  Only ``pi`` is integrated per quantity.
    """

    def __init__(
        self,
        params: ValidatedParams,
        grid: TimeGrid,
        *,
        threshold: float = DEFAULT_BLOW_UP_THRESHOLD,
    ) -> None:
        self.params = params.replace(lam=0.0, F=0.0)
        self.grid = grid
        self.threshold = threshold
        base = build_coefficients(self.params)
        self.pi_hat = solve_pi_hat(base, grid, threshold=threshold)
        self.h0 = solve_h(base, self.pi_hat, 0.0, grid)
        self.h1 = solve_h(base, self.pi_hat, 1.0, grid)

    def h_at(self, lam: float) -> GridFunction:
        return self.h0.combine(self.h1, lam)

    def solve(self, lam: float, *, F: float = 0.0) -> RiccatiSolution:
        coeffs = build_coefficients(self.params.replace(lam=lam, F=F))
        return solve_riccati(
            coeffs,
            self.grid,
            threshold=self.threshold,
            pi_hat=self.pi_hat,
            h_fun=self.h_at(lam),
        )
