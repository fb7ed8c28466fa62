"""Nash equilibrium assembly: feedback policy, moment trajectories and payoffs.

The pipeline is ``coefficients -> Riccati -> (A2) -> policy -> moments -> R ->
payoffs``.  Moments are integrated in centred form (means plus the covariance
matrix of ``(q, c)``); the statistics of the adjoint ``Y`` follow algebraically
from the linear ansatz ``Y = pi (X - Xbar) + pi_hat Xbar + h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from scipy.integrate import simpson

from commodity_nash.errors import GridParity, RequiresCertifiedSolution
from commodity_nash.grid import (
    FloatArray,
    GridFunction,
    TimeGrid,
    from_samples,
    rk4,
    write_columns,
)
from commodity_nash.model import (
    CoefficientSet,
    ValidatedParams,
    build_coefficients,
    closed_form_K,
    closed_form_K_prime,
)
from commodity_nash.riccati import (
    DEFAULT_BLOW_UP_THRESHOLD,
    LambdaFamily,
    RiccatiSolution,
    solve_riccati,
)
from commodity_nash.types import Player, Scalar

logger = structlog.get_logger()


def _diag_closed_forms(
    p: ValidatedParams, t: FloatArray, first: Scalar, second: Scalar
) -> tuple[FloatArray, FloatArray]:
    values = np.zeros((*np.shape(t), 2, 2))
    derivs = np.zeros_like(values)
    for i, which in enumerate((first, second)):
        values[..., i, i] = closed_form_K(p, t, which)
        derivs[..., i, i] = closed_form_K_prime(p, t, which)
    return values, derivs


# ---------------------------------------------------------------------------
# Feedback policy
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class PolicyTable:
    """Policy coefficients tabulated at a set of times (leading axis)."""

    dev_gain: FloatArray
    mean_gain: FloatArray
    const: FloatArray
    vol: FloatArray


@dataclass(frozen=True, slots=True, eq=False)
class FeedbackPolicy:
    """Equilibrium feedback strategies of both players.

    Drift controls are affine in ``(x - xbar, xbar)`` with ``x = (q, c)``::

        (u, v) = dev_gain (x - xbar) + mean_gain xbar + const

    Row 0 is the producer's ``u``, row 1 the consumer's ``v``.  The volatility
    controls ``z_star`` and ``y_star`` are deterministic.
    """

    dev_gain: GridFunction
    mean_gain: GridFunction
    const: GridFunction
    z_star: GridFunction
    y_star: GridFunction

    @property
    def grid(self) -> TimeGrid:
        return self.dev_gain.grid

    def volatility(self, player: Player) -> GridFunction:
        return self.z_star if player is Player.PRODUCER else self.y_star

    def tabulate(self, times: FloatArray) -> PolicyTable:
        """Evaluate every coefficient at *times* (Hermite between nodes)."""
        return PolicyTable(
            dev_gain=self.dev_gain(times),
            mean_gain=self.mean_gain(times),
            const=self.const(times),
            vol=np.stack([self.z_star(times), self.y_star(times)], axis=-1),
        )

    def on_half_grid(self) -> PolicyTable:
        return PolicyTable(
            dev_gain=self.dev_gain.on_half_grid(),
            mean_gain=self.mean_gain.on_half_grid(),
            const=self.const.on_half_grid(),
            vol=np.stack([self.z_star.on_half_grid(), self.y_star.on_half_grid()], axis=-1),
        )


def _volatility_controls(
    coeffs: CoefficientSet, ric: RiccatiSolution
) -> tuple[GridFunction, GridFunction]:
    """``sigma l / margin`` for both players, with exact node derivatives."""
    p = coeffs.params
    out = []
    for margin, sigma, l_weight, name in (
        (ric.a2_margin_p, p.sigma_p, p.l_p, "zstar"),
        (ric.a2_margin_c, p.sigma_c, p.l_c, "ystar"),
    ):
        scale = sigma * l_weight
        values = scale / margin.values
        derivs = -scale * margin.derivs / margin.values**2
        out.append(GridFunction(ric.grid, values, derivs, (name,)))
    return out[0], out[1]


def build_policy(coeffs: CoefficientSet, ric: RiccatiSolution) -> FeedbackPolicy:
    """Feedback form of the equilibrium strategies.

    Raises:
        RequiresCertifiedSolution: (A2) does not hold on the grid.
    """
    if not ric.certified:
        raise RequiresCertifiedSolution(
            f"(A2) not certified: min margins {ric.a2.min_margin_p:.6g}, "
            f"{ric.a2.min_margin_c:.6g}"
        )
    p = coeffs.params
    grid = ric.grid
    t = grid.nodes
    gains = coeffs.gains[:, None]

    k_vals, k_derivs = _diag_closed_forms(p, t, Scalar.KP, Scalar.KC)
    l_vals, l_derivs = _diag_closed_forms(p, t, Scalar.LAMBDA_P, Scalar.LAMBDA_C)

    dev_gain = GridFunction(
        grid,
        gains * (k_vals + ric.pi.values),
        gains * (k_derivs + ric.pi.derivs),
        ("dev_gain",),
    )
    mean_gain = GridFunction(
        grid,
        gains * (l_vals + ric.pi_hat.values),
        gains * (l_derivs + ric.pi_hat.derivs),
        ("mean_gain",),
    )
    const = GridFunction(
        grid,
        coeffs.gains * ric.h_fun.values,
        coeffs.gains * ric.h_fun.derivs,
        ("const_u", "const_v"),
    )
    z_star, y_star = _volatility_controls(coeffs, ric)
    return FeedbackPolicy(dev_gain, mean_gain, const, z_star, y_star)


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True, eq=False)
class MomentTrajectory:
    """First and second moments of ``(q, c)`` and the derived ``Y`` statistics.

    ``mean`` holds ``(qbar, cbar)`` and ``cov`` the 2x2 covariance matrix, both
    straight from the RK4 integration.  ``ybar`` and ``ysq`` hold
    ``(E[Y^p], E[Y^c])`` and ``(E[(Y^p)^2], E[(Y^c)^2])``.
    """

    mean: GridFunction
    cov: GridFunction
    ybar: GridFunction
    ysq: GridFunction
    spot_mean: GridFunction

    @property
    def grid(self) -> TimeGrid:
        return self.mean.grid

    @property
    def qbar(self) -> FloatArray:
        return self.mean.values[:, 0]

    @property
    def cbar(self) -> FloatArray:
        return self.mean.values[:, 1]

    @property
    def var_q(self) -> FloatArray:
        return self.cov.values[:, 0, 0]

    @property
    def var_c(self) -> FloatArray:
        return self.cov.values[:, 1, 1]

    @property
    def cov_qc(self) -> FloatArray:
        return self.cov.values[:, 0, 1]

    @property
    def eq2(self) -> FloatArray:
        return self.var_q + self.qbar**2

    @property
    def ec2(self) -> FloatArray:
        return self.var_c + self.cbar**2

    @property
    def eqc(self) -> FloatArray:
        return self.cov_qc + self.qbar * self.cbar

    @property
    def expected_spot_T(self) -> float:
        return float(self.spot_mean.terminal)

    def moment_violations(self, tol: float = 1e-9) -> list[str]:
        """Nodes where a variance is negative or Cauchy-Schwarz fails."""
        issues = []
        scale = 1.0 + np.abs(self.eq2) + np.abs(self.ec2)
        if np.any(self.var_q < -tol * scale):
            issues.append("negative V[q]")
        if np.any(self.var_c < -tol * scale):
            issues.append("negative V[c]")
        if np.any(self.cov_qc**2 > self.var_q * self.var_c + tol * scale**2):
            issues.append("Cauchy-Schwarz violated for Cov[q, c]")
        return issues

    def to_csv(self, path: Path | str, policy: FeedbackPolicy | None = None) -> Path:
        columns = {
            "qbar": self.qbar,
            "cbar": self.cbar,
            "Eq2": self.eq2,
            "Ec2": self.ec2,
            "Eqc": self.eqc,
            "ES": self.spot_mean.values,
        }
        if policy is not None:
            columns["zstar"] = policy.z_star.values
            columns["ystar"] = policy.y_star.values
        columns |= {
            "Ybar_p": self.ybar.values[:, 0],
            "Ybar_c": self.ybar.values[:, 1],
            "EYp2": self.ysq.values[:, 0],
            "EYc2": self.ysq.values[:, 1],
            "Vq": self.var_q,
            "Vc": self.var_c,
            "Covqc": self.cov_qc,
        }
        return write_columns(path, self.grid, columns)


def _check_grids(grid: TimeGrid, *functions: GridFunction | FeedbackPolicy) -> None:
    for fn in functions:
        if fn.grid != grid:
            raise ValueError(f"grid mismatch: expected {grid}, got {fn.grid}")


def integrate_moments(
    policy: FeedbackPolicy,
    coeffs: CoefficientSet,
    ric: RiccatiSolution,
    grid: TimeGrid,
) -> MomentTrajectory:
    """Forward RK4 for ``m' = A_hat m + b`` and ``C' = A C + C A^T + diag(z^2, y^2)``."""
    _check_grids(grid, policy, ric.pi)
    p = coeffs.params
    table = policy.on_half_grid()
    dev, mean_gain, const = table.dev_gain, table.mean_gain, table.const
    noise = table.vol**2

    def rhs(s: int, state: FloatArray) -> FloatArray:
        m = state[:2]
        C = state[2:].reshape(2, 2)
        A = dev[s]
        dC = A @ C + C @ A.T
        dC[0, 0] += noise[s, 0]
        dC[1, 1] += noise[s, 1]
        return np.concatenate([mean_gain[s] @ m + const[s], dC.ravel()])

    start = np.array([p.q0, p.c0, 0.0, 0.0, 0.0, 0.0])
    values, derivs = rk4(rhs, start, grid)
    n = grid.n_steps + 1
    mean = GridFunction(grid, values[:, :2], derivs[:, :2], ("qbar", "cbar"))
    cov = GridFunction(
        grid, values[:, 2:].reshape(n, 2, 2), derivs[:, 2:].reshape(n, 2, 2), ("cov",)
    )

    m = mean.values
    C = cov.values
    pi = ric.pi.values
    ybar = np.einsum("nij,nj->ni", ric.pi_hat.values, m) + ric.h_fun.values
    ysq = np.einsum("nij,njk,nik->ni", pi, C, pi) + ybar**2
    spot = p.expected_spot(m[:, 0], m[:, 1])
    spot_derivs = -p.rho_p * mean.derivs[:, 0] + p.gamma * p.rho_c * mean.derivs[:, 1]

    traj = MomentTrajectory(
        mean=mean,
        cov=cov,
        ybar=from_samples(grid, ybar, ("Ybar_p", "Ybar_c")),
        ysq=from_samples(grid, ysq, ("EYp2", "EYc2")),
        spot_mean=GridFunction(grid, spot, spot_derivs, ("ES",)),
    )
    logger.debug(
        "moments_integrated",
        n_steps=grid.n_steps,
        qbar_T=float(traj.qbar[-1]),
        cbar_T=float(traj.cbar[-1]),
        var_q_T=float(traj.var_q[-1]),
    )
    return traj


def crosscheck_Ysq_backward(
    traj: MomentTrajectory,
    coeffs: CoefficientSet,
    ric: RiccatiSolution,
    grid: TimeGrid,
) -> float:
    """Integrate the backward ODEs for ``E[(Y^p)^2]``, ``E[(Y^c)^2]``.

    Returns the maximum absolute discrepancy against the algebraic values
    stored on *traj*.
    """
    _check_grids(grid, traj.mean, ric.pi)
    p = coeffs.params
    half = grid.half_nodes
    m = traj.mean.on_half_grid()
    C = traj.cov.on_half_grid()
    pi = ric.pi.on_half_grid()
    ybar = np.einsum("nij,nj->ni", ric.pi_hat.on_half_grid(), m) + ric.h_fun.on_half_grid()

    # Cov(Y^p, c) and Cov(Y^c, q)
    pc = np.einsum("nij,njk->nik", pi, C)
    cov_yx = np.stack([pc[:, 0, 1], pc[:, 1, 0]], axis=-1)
    other_mean = m[:, ::-1]
    e_yx = cov_yx + ybar * other_mean

    k_own = np.stack([closed_form_K(p, half, Scalar.KP), closed_form_K(p, half, Scalar.KC)], -1)
    lam_own = np.stack(
        [closed_form_K(p, half, Scalar.LAMBDA_P), closed_form_K(p, half, Scalar.LAMBDA_C)], -1
    )
    z = p.sigma_p * p.l_p / ric.a2_margin_p.on_half_grid()
    y = p.sigma_c * p.l_c / ric.a2_margin_c.on_half_grid()
    ito = pi[:, :, 0] ** 2 * (z**2)[:, None] + pi[:, :, 1] ** 2 * (y**2)[:, None]

    xi_hat_off = np.array([coeffs.xi_hat[0, 1], coeffs.xi_hat[1, 0]])
    xi_off = np.array([coeffs.xi[0, 1], coeffs.xi[1, 0]])
    gains = coeffs.gains
    psi = coeffs.psi
    ybar2 = ybar**2

    def rhs(s: int, w: FloatArray) -> FloatArray:
        drift = (
            psi * ybar[s]
            + xi_hat_off * e_yx[s]
            + (xi_off - xi_hat_off) * cov_yx[s]
            - gains * (k_own[s] * (w - ybar2[s]) + lam_own[s] * ybar2[s])
        )
        return 2.0 * drift + ito[s]

    values, _ = rk4(rhs, ric.h_fun.terminal**2, grid, backward=True)
    residual = float(np.max(np.abs(values - traj.ysq.values)))
    logger.debug("ysq_crosscheck", max_residual=residual)
    return residual


# ---------------------------------------------------------------------------
# Payoffs
# ---------------------------------------------------------------------------


def _simpson(grid: TimeGrid, values: FloatArray) -> float:
    if grid.n_steps % 2:
        raise GridParity(grid.n_steps)
    return float(simpson(values, x=grid.nodes))


def compute_R(
    traj: MomentTrajectory,
    policy: FeedbackPolicy,
    coeffs: CoefficientSet,
    ric: RiccatiSolution,
    grid: TimeGrid,
    lam: float,
) -> tuple[float, float]:
    """``(R_p(0), R_c(0))`` by composite Simpson on *grid*.

    Raises:
        GridParity: *grid* has an odd number of steps.
    """
    if grid.n_steps % 2:
        raise GridParity(grid.n_steps)
    _check_grids(grid, traj.mean, policy, ric.pi)
    p = coeffs.params
    t = grid.nodes
    lam2 = lam * lam
    pi = ric.pi.values
    k_p = closed_form_K(p, t, Scalar.KP)
    k_c = closed_form_K(p, t, Scalar.KC)

    vol_p = 2.0 * (pi[:, 0, 0] * policy.z_star.values + 0.5 * p.l_p * p.sigma_p) ** 2
    vol_c = 2.0 * (pi[:, 1, 1] * policy.y_star.values + 0.5 * p.l_c * p.sigma_c) ** 2
    gc = p.gamma * p.rho_c

    integrand_p = (
        2.0 / p.k_p * traj.ysq.values[:, 0]
        - p.eta_p * lam2 * gc**2 * traj.var_c
        + vol_p / (p.l_p - 2.0 * k_p)
    )
    integrand_c = (
        2.0 / p.k_c * traj.ysq.values[:, 1]
        - p.eta_c * lam2 * p.rho_p**2 * traj.var_q
        + vol_c / (p.l_c - 2.0 * k_c)
    )
    r_p = _simpson(grid, integrand_p) - lam * gc * traj.cbar[-1]
    r_c = _simpson(grid, integrand_c) - lam * p.rho_p * traj.qbar[-1]
    return r_p, r_c


@dataclass(frozen=True, slots=True, eq=False)
class EquilibriumReport:
    """Equilibrium payoffs and the objects they were computed from."""

    lam: float
    F: float
    J_p_star: float
    J_c_star: float
    R_p0: float
    R_c0: float
    Ybar_p0: float
    Ybar_c0: float
    policy: FeedbackPolicy
    moments: MomentTrajectory
    riccati: RiccatiSolution

    @property
    def params(self) -> ValidatedParams:
        return self.riccati.coeffs.params

    @property
    def expected_spot_T(self) -> float:
        return self.moments.expected_spot_T

    @property
    def reduced_sum(self) -> float:
        """``2 h_1(0) q0 + 2 h_2(0) c0 + R_c(0) + R_p(0)``, the contract-dependent part."""
        p = self.params
        h0 = self.riccati.h_fun.initial
        return 2.0 * h0[0] * p.q0 + 2.0 * h0[1] * p.c0 + self.R_c0 + self.R_p0

    def payoff(self, player: Player) -> float:
        return self.J_p_star if player is Player.PRODUCER else self.J_c_star

    def as_row(self) -> dict[str, Any]:
        return {
            "lambda": self.lam,
            "F": self.F,
            "J_p_star": self.J_p_star,
            "J_c_star": self.J_c_star,
            "R_p0": self.R_p0,
            "R_c0": self.R_c0,
            "Ybar_p0": self.Ybar_p0,
            "Ybar_c0": self.Ybar_c0,
            "E_S_T": self.expected_spot_T,
            "min_margin_p": self.riccati.a2.min_margin_p,
            "min_margin_c": self.riccati.a2.min_margin_c,
        }


def compute_payoffs(
    p: ValidatedParams,
    ric: RiccatiSolution,
    traj: MomentTrajectory,
    R_p0: float,
    R_c0: float,
    *,
    policy: FeedbackPolicy,
) -> EquilibriumReport:
    """Closed-form equilibrium payoffs from the solved pieces."""
    ybar_p0, ybar_c0 = (float(v) for v in traj.ybar.initial)
    lambda_p0 = float(closed_form_K(p, 0.0, Scalar.LAMBDA_P))
    lambda_c0 = float(closed_form_K(p, 0.0, Scalar.LAMBDA_C))
    j_p = (
        lambda_p0 * p.q0**2
        + 2.0 * ybar_p0 * p.q0
        + R_p0
        + p.F
        - p.lam * p.s0
        - 0.5 * p.l_p * p.sigma_p**2 * p.T
    )
    j_c = (
        lambda_c0 * p.c0**2
        + 2.0 * ybar_c0 * p.c0
        + R_c0
        - p.F
        + p.lam * p.s0
        - 0.5 * p.l_c * p.sigma_c**2 * p.T
    )
    return EquilibriumReport(
        lam=p.lam,
        F=p.F,
        J_p_star=j_p,
        J_c_star=j_c,
        R_p0=R_p0,
        R_c0=R_c0,
        Ybar_p0=ybar_p0,
        Ybar_c0=ybar_c0,
        policy=policy,
        moments=traj,
        riccati=ric,
    )


@dataclass(frozen=True, slots=True)
class PlayerTerms:
    """One player's objective split into its parts."""

    profit: float
    drift_cost: float
    vol_cost: float
    contract: float
    penalty: float

    @property
    def total(self) -> float:
        return self.profit + self.drift_cost + self.vol_cost + self.contract + self.penalty

    def as_dict(self) -> dict[str, float]:
        return {
            "profit": self.profit,
            "drift_cost": self.drift_cost,
            "vol_cost": self.vol_cost,
            "contract": self.contract,
            "penalty": self.penalty,
            "total": self.total,
        }


@dataclass(frozen=True, slots=True)
class PayoffBreakdown:
    producer: PlayerTerms
    consumer: PlayerTerms

    def for_player(self, player: Player) -> PlayerTerms:
        return self.producer if player is Player.PRODUCER else self.consumer


def payoff_breakdown(
    params: ValidatedParams,
    ric: RiccatiSolution,
    policy: FeedbackPolicy,
    traj: MomentTrajectory,
) -> PayoffBreakdown:
    """Evaluate both objectives term by term from the moments.

    Independent of the Riccati payoff representation: only the state moments
    and the feedback coefficients enter.
    """
    p = params
    grid = traj.grid
    _check_grids(grid, policy, ric.pi)
    gc = p.gamma * p.rho_c
    m = traj.mean.values
    C = traj.cov.values

    e_qs = p.s0 * traj.qbar - p.rho_p * traj.eq2 + gc * traj.eqc
    e_cs = p.s0 * traj.cbar - p.rho_p * traj.eqc + gc * traj.ec2
    profit_c = (p.p0 - p.gamma * p.delta) * traj.cbar + (p.p1 - p.gamma) * e_cs

    A = policy.dev_gain.values
    drift_mean = np.einsum("nij,nj->ni", policy.mean_gain.values, m) + policy.const.values
    drift_sq = np.einsum("nij,njk,nik->ni", A, C, A) + drift_mean**2

    spot_T = traj.expected_spot_T
    var_spot = p.spot_variance(traj.var_q, traj.var_c, traj.cov_qc)
    lam2 = p.lam * p.lam
    integrated_var = _simpson(grid, var_spot)

    producer = PlayerTerms(
        profit=_simpson(grid, e_qs),
        drift_cost=-0.5 * p.k_p * _simpson(grid, drift_sq[:, 0]),
        vol_cost=-0.5 * p.l_p * _simpson(grid, (policy.z_star.values - p.sigma_p) ** 2),
        contract=p.F - p.lam * spot_T,
        penalty=-p.eta_p * lam2 * integrated_var,
    )
    consumer = PlayerTerms(
        profit=_simpson(grid, profit_c),
        drift_cost=-0.5 * p.k_c * _simpson(grid, drift_sq[:, 1]),
        vol_cost=-0.5 * p.l_c * _simpson(grid, (policy.y_star.values - p.sigma_c) ** 2),
        contract=-p.F + p.lam * spot_T,
        penalty=-p.eta_c * lam2 * integrated_var,
    )
    return PayoffBreakdown(producer=producer, consumer=consumer)


def solve_equilibrium(
    params: ValidatedParams,
    grid: TimeGrid,
    *,
    threshold: float = DEFAULT_BLOW_UP_THRESHOLD,
    family: LambdaFamily | None = None,
) -> EquilibriumReport:
    """Run the full pipeline at the contract ``(params.lam, params.F)``.

    With *family* the contract-invariant Riccati parts are reused.

    Raises:
        BlowUp: Riccati blow-up (horizon beyond the existence interval).
        A2Violation: a volatility-control denominator is not positive.
        GridParity: odd number of steps.
    """
    if grid.n_steps % 2:
        raise GridParity(grid.n_steps)
    if family is not None:
        if family.grid != grid:
            raise ValueError("LambdaFamily was built on a different grid")
        if family.params != params.replace(lam=0.0, F=0.0):
            raise ValueError("LambdaFamily was built for different model parameters")
        ric = family.solve(params.lam, F=params.F)
        coeffs = ric.coeffs
    else:
        coeffs = build_coefficients(params)
        ric = solve_riccati(coeffs, grid, threshold=threshold)
    policy = build_policy(coeffs, ric)
    traj = integrate_moments(policy, coeffs, ric, grid)
    r_p, r_c = compute_R(traj, policy, coeffs, ric, grid, params.lam)
    report = compute_payoffs(coeffs.params, ric, traj, r_p, r_c, policy=policy)
    logger.debug(
        "equilibrium_solved",
        lam=report.lam,
        F=report.F,
        J_p_star=report.J_p_star,
        J_c_star=report.J_c_star,
    )
    return report
