"""Shared enums for the commodity-nash solver."""

from __future__ import annotations

from enum import StrEnum


class Player(StrEnum):
    """Side of the forward agreement."""

    PRODUCER = "producer"
    CONSUMER = "consumer"

    @property
    def index(self) -> int:
        return 0 if self is Player.PRODUCER else 1

    @property
    def other(self) -> Player:
        return Player.CONSUMER if self is Player.PRODUCER else Player.PRODUCER


class Scalar(StrEnum):
    """Closed-form scalar Riccati functions."""

    KP = "Kp"
    KC = "Kc"
    LAMBDA_P = "Lambda_p"
    LAMBDA_C = "Lambda_c"


class Gain(StrEnum):
    """Producer feedback coefficient a deviation can perturb."""

    Q_DEV = "q_dev"  # coefficient of (q - qbar)
    C_DEV = "c_dev"  # coefficient of (c - cbar)
    Q_MEAN = "q_mean"  # coefficient of qbar
    C_MEAN = "c_mean"  # coefficient of cbar
    CONST = "const"
    Z_SHIFT = "z_shift"  # constant shift of the volatility control


class Spacing(StrEnum):
    LINEAR = "linear"
    LOG = "log"


class Quantity(StrEnum):
    """Quantities a sweep can report."""

    F_STAR = "F_star"
    LAMBDA_STAR = "lambda_star"
    UNIT_PRICE = "unit_price"
    PREMIUM = "premium"
    J_P_STAR_AT_AGREEMENT = "J_p_star_at_agreement"


class PointStatus(StrEnum):
    """Outcome of one sweep grid point."""

    OK = "ok"
    BLOW_UP = "blow_up"
    A2_VIOLATION = "a2_violation"
    NO_SIGN_CHANGE = "no_sign_change"
    DEGENERATE = "degenerate"
    SOLVER_ERROR = "solver_error"
    INVALID_PARAMS = "invalid_params"
