"""Model parameters and the derived coefficient functions of the game.

The producer controls the drift ``u`` and volatility ``z`` of its production
rate ``q``; the consumer controls ``v`` and ``y`` for its consumption rate ``c``.
The spot price is ``S = s0 - rho_p q + gamma rho_c c``.  Everything the Riccati
systems need (the matrices ``Xi``, ``Xi_hat``, ``R``, ``Psi`` and the
time-dependent ``Phi``, ``Phi_hat``) is derived here from the primitive inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import structlog
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

from commodity_nash.errors import ConstraintViolation
from commodity_nash.types import Player, Scalar

logger = structlog.get_logger()

FloatArray = NDArray[np.float64]


class ModelParams(BaseModel):
    """Primitive inputs of the producer/consumer game plus the contract terms."""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    T: float = Field(..., description="Time horizon in years")
    k_p: float = Field(..., description="Producer drift-control cost weight")
    k_c: float = Field(..., description="Consumer drift-control cost weight")
    l_p: float = Field(..., description="Producer volatility-control cost weight")
    l_c: float = Field(..., description="Consumer volatility-control cost weight")
    sigma_p: float = Field(..., description="Producer nominal volatility")
    sigma_c: float = Field(..., description="Consumer nominal volatility")
    eta_p: float = Field(..., description="Producer risk-aversion weight")
    eta_c: float = Field(..., description="Consumer risk-aversion weight")
    rho_p: float = Field(..., description="Producer price-impact slope")
    rho_c: float = Field(..., description="Consumer price-impact slope")
    gamma: float = Field(..., description="Transformation ratio")
    delta: float = Field(..., description="Transformation cost")
    p0: float = Field(..., description="Retail price intercept")
    p1: float = Field(..., description="Retail price slope")
    s0: float = Field(..., description="Spot price intercept")
    q0: float = Field(..., description="Initial production rate")
    c0: float = Field(..., description="Initial consumption rate")
    lam: float = Field(0.0, alias="lambda", description="Forward contract quantity")
    F: float = Field(0.0, description="Forward contract cash amount")


class ValidatedParams(ModelParams):
    """Parameters whose invariants have been certified by :func:`validate_params`."""

    def replace(self, **changes: Any) -> ValidatedParams:
        """Return a copy with *changes* applied, validated again."""
        data = self.model_dump()
        data.update(changes)
        return validate_params(ModelParams(**data), **self._limits())

    def _limits(self) -> dict[str, bool]:
        return {
            "allow_zero_impact": self.rho_p == 0 or self.rho_c == 0,
            "allow_zero_noise": self.sigma_p == 0 or self.sigma_c == 0,
        }

    @property
    def h_terminal(self) -> FloatArray:
        """Terminal condition of the linear ODE for ``h``."""
        return 0.5 * self.lam * np.array([self.rho_p, self.gamma * self.rho_c])

    def cost_weights(self, player: Player) -> tuple[float, float, float]:
        """``(k, l, sigma)`` for *player*."""
        if player is Player.PRODUCER:
            return self.k_p, self.l_p, self.sigma_p
        return self.k_c, self.l_c, self.sigma_c

    def expected_spot(self, qbar: ArrayLike, cbar: ArrayLike) -> FloatArray:
        return self.s0 - self.rho_p * np.asarray(qbar) + self.gamma * self.rho_c * np.asarray(cbar)

    def spot_variance(self, var_q: ArrayLike, var_c: ArrayLike, cov_qc: ArrayLike) -> FloatArray:
        """``V[S]`` from the state covariance (Fubini identity used by the penalty)."""
        a = self.rho_p
        b = self.gamma * self.rho_c
        vq, vc, cv = np.asarray(var_q), np.asarray(var_c), np.asarray(cov_qc)
        return a * a * vq + b * b * vc - 2.0 * a * b * cv


_POSITIVE = (
    "T",
    "k_p",
    "k_c",
    "eta_p",
    "eta_c",
    "gamma",
    "delta",
    "p0",
    "p1",
    "s0",
    "q0",
    "c0",
)
_IMPACTS = ("rho_p", "rho_c")
_NOISE = ("sigma_p", "sigma_c")
_NON_NEGATIVE = ("l_p", "l_c")


def validate_params(
    p: ModelParams | dict[str, Any],
    *,
    allow_zero_impact: bool = False,
    allow_zero_noise: bool = False,
) -> ValidatedParams:
    """Certify the invariants of *p* and return it as :class:`ValidatedParams`.

    ``allow_zero_impact`` admits ``rho_p = 0`` or ``rho_c = 0`` (a player without
    market power) and ``allow_zero_noise`` admits zero nominal volatilities
    (deterministic dynamics).  Both limits are outside the model's standing
    assumptions and exist for diagnostics.

    Raises:
        ConstraintViolation: naming the first failed invariant; ``violations``
            lists all of them.
    """
    if isinstance(p, dict):
        p = ModelParams(**p)

    violations: list[tuple[str, str]] = []
    for name, value in p.model_dump().items():
        if not math.isfinite(value):
            violations.append((name, f"{name} must be finite"))

    def _check(names: tuple[str, ...], strict: bool) -> None:
        for name in names:
            value = getattr(p, name)
            if not math.isfinite(value):
                continue
            if strict and value <= 0:
                violations.append((name, f"{name} must be > 0"))
            elif not strict and value < 0:
                violations.append((name, f"{name} must be >= 0"))

    _check(_POSITIVE, strict=True)
    _check(_NON_NEGATIVE, strict=False)
    _check(_IMPACTS, strict=not allow_zero_impact)
    _check(_NOISE, strict=not allow_zero_noise)
    if p.gamma <= p.p1:
        violations.append(("gamma", "gamma must exceed p1"))

    if violations:
        field, reason = violations[0]
        logger.debug("params_rejected", violations=violations)
        raise ConstraintViolation(field, reason, tuple(violations))
    return ValidatedParams(**p.model_dump())


# ---------------------------------------------------------------------------
# Closed-form scalar Riccati functions
# ---------------------------------------------------------------------------


def _scalar_rate(p: ValidatedParams, which: Scalar) -> tuple[float, float]:
    """``(k, a)`` such that the function solves ``K' = -(2/k) K^2 + a``, ``K(T) = 0``."""
    lam2 = p.lam * p.lam
    gc = p.gamma * p.rho_c
    match which:
        case Scalar.KP:
            return p.k_p, p.rho_p + p.eta_p * lam2 * p.rho_p**2
        case Scalar.LAMBDA_P:
            return p.k_p, p.rho_p
        case Scalar.KC:
            return p.k_c, gc * (p.gamma - p.p1) + p.eta_c * lam2 * gc**2
        case Scalar.LAMBDA_C:
            return p.k_c, gc * (p.gamma - p.p1)
    raise ValueError(f"unknown scalar function {which!r}")


def closed_form_K(p: ValidatedParams, t: ArrayLike, which: Scalar) -> FloatArray:
    """``-(k/2) s tanh(s (T - t))`` with ``s = sqrt(2a/k)``; zero at ``t = T``."""
    k, a = _scalar_rate(p, which)
    s = math.sqrt(2.0 * a / k)
    return -0.5 * k * s * np.tanh(s * (p.T - np.asarray(t, dtype=float)))


def closed_form_K_prime(p: ValidatedParams, t: ArrayLike, which: Scalar) -> FloatArray:
    """Analytic time derivative of :func:`closed_form_K`, ``a sech^2(s (T - t))``."""
    k, a = _scalar_rate(p, which)
    s = math.sqrt(2.0 * a / k)
    return a / np.cosh(s * (p.T - np.asarray(t, dtype=float))) ** 2


def scalar_riccati_rhs(p: ValidatedParams, which: Scalar, value: ArrayLike) -> FloatArray:
    """Right-hand side ``-(2/k) K^2 + a`` of the scalar Riccati ODE."""
    k, a = _scalar_rate(p, which)
    value = np.asarray(value, dtype=float)
    return -2.0 / k * value * value + a


# ---------------------------------------------------------------------------
# Coefficient set
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class CoefficientSet:
    """Matrices and closed-form functions feeding the Riccati systems.

    The time-dependent members are evaluated lazily so integrators can query
    them at RK4 stage points.
    """

    params: ValidatedParams
    xi: FloatArray
    xi_hat: FloatArray
    r_mat: FloatArray
    psi: FloatArray

    def k_p(self, t: ArrayLike) -> FloatArray:
        return closed_form_K(self.params, t, Scalar.KP)

    def k_c(self, t: ArrayLike) -> FloatArray:
        return closed_form_K(self.params, t, Scalar.KC)

    def lambda_p(self, t: ArrayLike) -> FloatArray:
        return closed_form_K(self.params, t, Scalar.LAMBDA_P)

    def lambda_c(self, t: ArrayLike) -> FloatArray:
        return closed_form_K(self.params, t, Scalar.LAMBDA_C)

    def phi_diag(self, t: ArrayLike) -> FloatArray:
        """Diagonal of ``Phi(t)``, shape ``(..., 2)``."""
        p = self.params
        return np.stack([-2.0 / p.k_p * self.k_p(t), -2.0 / p.k_c * self.k_c(t)], axis=-1)

    def phi_hat_diag(self, t: ArrayLike) -> FloatArray:
        """Diagonal of ``Phi_hat(t)``, shape ``(..., 2)``."""
        p = self.params
        return np.stack(
            [-2.0 / p.k_p * self.lambda_p(t), -2.0 / p.k_c * self.lambda_c(t)], axis=-1
        )

    def phi(self, t: float) -> FloatArray:
        return np.diag(self.phi_diag(t))

    def phi_hat(self, t: float) -> FloatArray:
        return np.diag(self.phi_hat_diag(t))

    @property
    def r_diag(self) -> FloatArray:
        return np.diag(self.r_mat).copy()

    @property
    def gains(self) -> FloatArray:
        """``(2/k_p, 2/k_c)``, the factor turning Riccati terms into drift controls."""
        return -self.r_diag


def build_coefficients(p: ValidatedParams) -> CoefficientSet:
    """Assemble ``Xi``, ``Xi_hat``, ``R`` and ``Psi`` from validated parameters."""
    lam2 = p.lam * p.lam
    gc = p.gamma * p.rho_c
    cross_p = 0.5 * gc
    cross_c = 0.5 * p.rho_p * (p.gamma - p.p1)

    xi_hat = np.array([[0.0, -cross_p], [-cross_c, 0.0]])
    xi = np.array(
        [
            [0.0, -p.rho_p * gc * p.eta_p * lam2 - cross_p],
            [-p.rho_p * gc * p.eta_c * lam2 - cross_c, 0.0],
        ]
    )
    r_mat = np.diag([-2.0 / p.k_p, -2.0 / p.k_c])
    psi = np.array(
        [
            -0.5 * p.s0,
            -0.5 * (p.p0 + p.p1 * p.s0 - p.gamma * (p.delta + p.s0)),
        ]
    )
    return CoefficientSet(params=p, xi=xi, xi_hat=xi_hat, r_mat=r_mat, psi=psi)
