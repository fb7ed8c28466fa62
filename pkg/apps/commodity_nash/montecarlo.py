"""Monte Carlo validation of the semi-explicit equilibrium.

Closed-loop paths of ``(q, c)`` are simulated with Euler-Maruyama.  The mean
field terms in the feedback law come from the deterministic moment ODEs, not
from the simulated cross-section.  Paths are split into fixed-size chunks, each
with its own Philox stream spawned from one ``SeedSequence``, so estimates do
not depend on how many workers run the chunks.  Streams belong to chunks, not
to single paths: the same seed with another ``chunk_size`` draws other normals.

The Euler scheme has a first-order time bias.  Without noise every path equals
the deterministic trajectory, yet the simulated payoffs still differ from the
semi-explicit ones by a relative 1e-3 or so at 2000 steps; noise-free
comparisons hold at that level, not at round-off.

A deviation arm can be simulated alongside the equilibrium on the same
normals: the deviating player follows a perturbed feedback law on its own
state while the other player keeps the control it uses on the equilibrium path.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import structlog

from commodity_nash.equilibrium import (
    EquilibriumReport,
    FeedbackPolicy,
    MomentTrajectory,
    PlayerTerms,
)
from commodity_nash.errors import SimConfigError
from commodity_nash.grid import FloatArray, TimeGrid
from commodity_nash.model import ValidatedParams
from commodity_nash.types import Gain, Player

logger = structlog.get_logger()

IDENTITY_FLOOR = 1e-4


@dataclass(frozen=True, slots=True)
class DeviationSpec:
    """Add *epsilon* to one feedback coefficient of *player*."""

    gain: Gain
    epsilon: float
    player: Player = Player.PRODUCER


@dataclass(frozen=True, slots=True)
class SimConfig:
    n_paths: int
    n_time_steps: int
    seed: int = 42
    deviation: DeviationSpec | None = None
    chunk_size: int = 10_000
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_paths < 2:
            raise SimConfigError(f"n_paths must be >= 2, got {self.n_paths}")
        if self.n_time_steps < 1:
            raise SimConfigError(f"n_time_steps must be positive, got {self.n_time_steps}")
        if not 0 <= self.seed < 2**64:
            raise SimConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.chunk_size < 2:
            raise SimConfigError(f"chunk_size must be >= 2, got {self.chunk_size}")
        if self.workers < 1:
            raise SimConfigError(f"workers must be positive, got {self.workers}")

    @property
    def chunk_sizes(self) -> list[int]:
        full, rest = divmod(self.n_paths, self.chunk_size)
        sizes = [self.chunk_size] * full
        if rest:
            sizes.append(rest)
        return sizes

    def check_nested(self, grid: TimeGrid) -> None:
        """The simulation grid and the Riccati grid must refine one another.

        Raises:
            SimConfigError: neither step count divides the other.
        """
        a, b = self.n_time_steps, grid.n_steps
        if max(a, b) % min(a, b):
            raise SimConfigError(
                f"n_time_steps={a} and Riccati n_steps={b} are not nested grids"
            )


# ---------------------------------------------------------------------------
# Estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class MomentEstimate:
    """Cross-sectional moments of ``(q, c)`` at one time, with standard errors."""

    t: float
    mean: FloatArray
    mean_se: FloatArray
    var: FloatArray
    var_se: FloatArray
    cov: float
    cov_se: float


@dataclass(frozen=True, slots=True)
class McEstimate:
    J_p_hat: float
    J_c_hat: float
    se_p: float
    se_c: float
    producer: PlayerTerms
    consumer: PlayerTerms
    n_paths: int
    n_time_steps: int
    integrated_var_spot: float
    integrated_var_identity: float
    moments: tuple[MomentEstimate, ...] = field(default=())

    def payoff(self, player: Player) -> tuple[float, float]:
        """``(estimate, standard error)`` for *player*."""
        if player is Player.PRODUCER:
            return self.J_p_hat, self.se_p
        return self.J_c_hat, self.se_c

    def moment_at(self, t: float) -> MomentEstimate:
        return min(self.moments, key=lambda m: abs(m.t - t))


# ---------------------------------------------------------------------------
# Simulation core
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class _ArmTables:
    """Feedback coefficients of one arm at the simulation nodes."""

    dev: FloatArray  # (N+1, 2, 2)
    offset: FloatArray  # (N+1, 2): mean_gain @ xbar + const
    vol: FloatArray  # (N+1, 2)


@dataclass(frozen=True, slots=True)
class _Context:
    params: ValidatedParams
    times: FloatArray
    weights: FloatArray
    xbar: FloatArray
    spot_bar: FloatArray
    eq: _ArmTables
    dev: _ArmTables | None
    deviator: int

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


def _arm_tables(
    dev: FloatArray, mean_gain: FloatArray, const: FloatArray, vol: FloatArray, xbar: FloatArray
) -> _ArmTables:
    offset = np.einsum("nij,nj->ni", mean_gain, xbar) + const
    return _ArmTables(dev=dev, offset=offset, vol=vol)


def _build_context(
    policy: FeedbackPolicy,
    traj: MomentTrajectory,
    p: ValidatedParams,
    cfg: SimConfig,
) -> _Context:
    cfg.check_nested(policy.grid)
    sim_grid = TimeGrid(p.T, cfg.n_time_steps)
    times = sim_grid.nodes
    weights = np.full(len(times), sim_grid.step)
    weights[[0, -1]] *= 0.5

    table = policy.tabulate(times)
    xbar = traj.mean(times)
    eq = _arm_tables(table.dev_gain, table.mean_gain, table.const, table.vol, xbar)

    dev_tables = None
    deviator = 0
    if (spec := cfg.deviation) is not None:
        i = spec.player.index
        dev_gain = table.dev_gain.copy()
        mean_gain = table.mean_gain.copy()
        const = table.const.copy()
        vol = table.vol.copy()
        match spec.gain:
            case Gain.Q_DEV:
                dev_gain[:, i, 0] += spec.epsilon
            case Gain.C_DEV:
                dev_gain[:, i, 1] += spec.epsilon
            case Gain.Q_MEAN:
                mean_gain[:, i, 0] += spec.epsilon
            case Gain.C_MEAN:
                mean_gain[:, i, 1] += spec.epsilon
            case Gain.CONST:
                const[:, i] += spec.epsilon
            case Gain.Z_SHIFT:
                vol[:, i] += spec.epsilon
        dev_tables = _arm_tables(dev_gain, mean_gain, const, vol, xbar)
        deviator = i

    return _Context(
        params=p,
        times=times,
        weights=weights,
        xbar=xbar,
        spot_bar=p.expected_spot(xbar[:, 0], xbar[:, 1]),
        eq=eq,
        dev=dev_tables,
        deviator=deviator,
    )


class _ArmAccumulator:
    """Per-path integrals and per-time cross-sectional sums of one arm."""

    def __init__(self, n: int, n_nodes: int) -> None:
        self.profit = np.zeros((n, 2))
        self.drift_sq = np.zeros((n, 2))
        self.spot_T = np.zeros(n)
        # per-time sums of deviations from the ODE means
        self.sums = np.zeros((7, n_nodes))

    def record(
        self,
        ctx: _Context,
        k: int,
        X: FloatArray,
        U: FloatArray,
        S: FloatArray,
    ) -> None:
        p = ctx.params
        w = ctx.weights[k]
        q, c = X[:, 0], X[:, 1]
        self.profit[:, 0] += w * (q * S)
        self.profit[:, 1] += w * ((p.p0 - p.gamma * p.delta) * c + (p.p1 - p.gamma) * (c * S))
        self.drift_sq += w * (U * U)
        dq = q - ctx.xbar[k, 0]
        dc = c - ctx.xbar[k, 1]
        dS = S - ctx.spot_bar[k]
        self.sums[:, k] = (
            np.sum(dq),
            np.sum(dc),
            np.sum(dq * dq),
            np.sum(dc * dc),
            np.sum(dq * dc),
            np.sum(dS),
            np.sum(dS * dS),
        )
        if k == ctx.n_steps:
            self.spot_T = S


@dataclass(frozen=True, slots=True)
class _ChunkResult:
    eq: _ArmAccumulator
    dev: _ArmAccumulator | None


def _controls(tables: _ArmTables, k: int, X: FloatArray, xbar: FloatArray) -> FloatArray:
    dq = X[:, 0] - xbar[0]
    dc = X[:, 1] - xbar[1]
    g = tables.dev[k]
    o = tables.offset[k]
    return np.stack([g[0, 0] * dq + g[0, 1] * dc + o[0], g[1, 0] * dq + g[1, 1] * dc + o[1]], 1)


def _spot(p: ValidatedParams, X: FloatArray) -> FloatArray:
    return p.s0 - p.rho_p * X[:, 0] + p.gamma * p.rho_c * X[:, 1]


def _run_chunk(ctx: _Context, seed: np.random.SeedSequence, n: int) -> _ChunkResult:
    p = ctx.params
    rng = np.random.Generator(np.random.Philox(seed))
    dt = ctx.times[1] - ctx.times[0]
    sqrt_dt = math.sqrt(dt)
    i = ctx.deviator
    dev_tables = ctx.dev

    X = np.empty((n, 2))
    X[:, 0] = p.q0
    X[:, 1] = p.c0
    Xd = X.copy()
    eq = _ArmAccumulator(n, ctx.n_steps + 1)
    dev = _ArmAccumulator(n, ctx.n_steps + 1) if dev_tables is not None else None

    for k in range(ctx.n_steps + 1):
        xbar = ctx.xbar[k]
        U = _controls(ctx.eq, k, X, xbar)
        eq.record(ctx, k, X, U, _spot(p, X))
        Ud = U
        if dev is not None and dev_tables is not None:
            Ud = U.copy()
            Ud[:, i] = _controls(dev_tables, k, Xd, xbar)[:, i]
            dev.record(ctx, k, Xd, Ud, _spot(p, Xd))
        if k == ctx.n_steps:
            break

        xi = rng.standard_normal((n, 2))
        X_next = X + U * dt + ctx.eq.vol[k] * sqrt_dt * xi
        if dev_tables is not None:
            Xd_next = X_next.copy()
            Xd_next[:, i] = Xd[:, i] + Ud[:, i] * dt + dev_tables.vol[k, i] * sqrt_dt * xi[:, i]
            Xd = Xd_next
        X = X_next

    return _ChunkResult(eq=eq, dev=dev)


@dataclass(frozen=True, slots=True)
class _ArmTotals:
    """One arm merged over all chunks."""

    J_paths: FloatArray  # (n, 2) path payoffs without the variance penalty
    profit: FloatArray
    drift_cost: FloatArray
    contract: FloatArray
    vol_cost: FloatArray  # (2,)
    penalty: FloatArray  # (2,)
    sums: FloatArray
    integrated_var_spot: float
    integrated_var_identity: float

    @property
    def n(self) -> int:
        return len(self.J_paths)


def _sample_var(s1: FloatArray, s2: FloatArray, n: int) -> FloatArray:
    return (s2 - s1 * s1 / n) / (n - 1)


def _merge(ctx: _Context, parts: Sequence[_ArmAccumulator], tables: _ArmTables) -> _ArmTotals:
    p = ctx.params
    n = sum(len(part.spot_T) for part in parts)
    sums = np.zeros_like(parts[0].sums)
    for part in parts:
        sums += part.sums
    profit = np.concatenate([part.profit for part in parts])
    drift_sq = np.concatenate([part.drift_sq for part in parts])
    spot_T = np.concatenate([part.spot_T for part in parts])

    drift_cost = -0.5 * np.array([p.k_p, p.k_c]) * drift_sq
    contract = np.stack([p.F - p.lam * spot_T, -p.F + p.lam * spot_T], axis=1)
    sigma = np.array([p.sigma_p, p.sigma_c])
    l_weight = np.array([p.l_p, p.l_c])
    vol_cost = -0.5 * l_weight * (ctx.weights @ (tables.vol - sigma) ** 2)

    var_q = _sample_var(sums[0], sums[2], n)
    var_c = _sample_var(sums[1], sums[3], n)
    cov_qc = (sums[4] - sums[0] * sums[1] / n) / (n - 1)
    var_S = _sample_var(sums[5], sums[6], n)
    integrated_var_spot = float(ctx.weights @ var_S)
    integrated_identity = float(ctx.weights @ p.spot_variance(var_q, var_c, cov_qc))
    penalty = -np.array([p.eta_p, p.eta_c]) * p.lam**2 * integrated_var_spot

    return _ArmTotals(
        J_paths=profit + drift_cost + contract + vol_cost,
        profit=profit,
        drift_cost=drift_cost,
        contract=contract,
        vol_cost=vol_cost,
        penalty=penalty,
        sums=sums,
        integrated_var_spot=integrated_var_spot,
        integrated_var_identity=integrated_identity,
    )


def _simulate_arms(
    policy: FeedbackPolicy,
    traj: MomentTrajectory,
    p: ValidatedParams,
    cfg: SimConfig,
) -> tuple[_Context, _ArmTotals, _ArmTotals | None]:
    ctx = _build_context(policy, traj, p, cfg)
    sizes = cfg.chunk_sizes
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    logger.info(
        "mc_simulation_started",
        n_paths=cfg.n_paths,
        n_time_steps=cfg.n_time_steps,
        chunks=len(sizes),
        workers=cfg.workers,
        deviation=None if cfg.deviation is None else dataclasses.asdict(cfg.deviation),
    )
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_chunk, [ctx] * len(sizes), seeds, sizes))
    else:
        chunks = [_run_chunk(ctx, seed, n) for seed, n in zip(seeds, sizes, strict=True)]

    eq = _merge(ctx, [c.eq for c in chunks], ctx.eq)
    dev = None
    if ctx.dev is not None:
        dev = _merge(ctx, [c.dev for c in chunks if c.dev is not None], ctx.dev)
    return ctx, eq, dev


def _moment_estimates(
    ctx: _Context, totals: _ArmTotals, at: Iterable[float]
) -> tuple[MomentEstimate, ...]:
    n = totals.n
    s = totals.sums
    # standard errors of the sample (co)variances assume Gaussian states
    out = []
    for t in at:
        k = int(round(t / (ctx.times[1] - ctx.times[0])))
        var = np.array([_sample_var(s[0, k], s[2, k], n), _sample_var(s[1, k], s[3, k], n)])
        cov = float((s[4, k] - s[0, k] * s[1, k] / n) / (n - 1))
        out.append(
            MomentEstimate(
                t=float(ctx.times[k]),
                mean=ctx.xbar[k] + s[:2, k] / n,
                mean_se=np.sqrt(var / n),
                var=var,
                var_se=var * math.sqrt(2.0 / (n - 1)),
                cov=cov,
                cov_se=math.sqrt((var[0] * var[1] + cov * cov) / (n - 1)),
            )
        )
    return tuple(out)


def _estimate(ctx: _Context, totals: _ArmTotals, cfg: SimConfig) -> McEstimate:
    n = totals.n
    means = totals.J_paths.mean(axis=0) + totals.penalty
    se = totals.J_paths.std(axis=0, ddof=1) / math.sqrt(n)

    def terms(i: int) -> PlayerTerms:
        return PlayerTerms(
            profit=float(totals.profit[:, i].mean()),
            drift_cost=float(totals.drift_cost[:, i].mean()),
            vol_cost=float(totals.vol_cost[i]),
            contract=float(totals.contract[:, i].mean()),
            penalty=float(totals.penalty[i]),
        )

    T = ctx.params.T
    return McEstimate(
        J_p_hat=float(means[0]),
        J_c_hat=float(means[1]),
        se_p=float(se[0]),
        se_c=float(se[1]),
        producer=terms(0),
        consumer=terms(1),
        n_paths=n,
        n_time_steps=cfg.n_time_steps,
        integrated_var_spot=totals.integrated_var_spot,
        integrated_var_identity=totals.integrated_var_identity,
        moments=_moment_estimates(ctx, totals, (0.25 * T, 0.5 * T, T)),
    )


def simulate_equilibrium(
    policy: FeedbackPolicy,
    traj: MomentTrajectory,
    p: ValidatedParams,
    cfg: SimConfig,
) -> McEstimate:
    """Estimate both objectives along simulated closed-loop paths.

    With ``cfg.deviation`` set the estimate is for the deviation arm.  The
    simulation grid must nest with the Riccati grid, otherwise
    :class:`SimConfigError` is raised before any path is drawn.
    """
    ctx, eq, dev = _simulate_arms(policy, traj, p, cfg)
    estimate = _estimate(ctx, dev if dev is not None else eq, cfg)
    logger.info(
        "mc_simulation_finished",
        J_p_hat=estimate.J_p_hat,
        se_p=estimate.se_p,
        J_c_hat=estimate.J_c_hat,
        se_c=estimate.se_c,
    )
    return estimate


# ---------------------------------------------------------------------------
# Deviation test
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class DeviationRow:
    epsilon: float
    delta_J: float
    se: float
    J_equilibrium: float
    J_deviation: float


@dataclass(frozen=True, slots=True)
class DeviationTable:
    player: Player
    gain: Gain
    rows: tuple[DeviationRow, ...]

    def equilibrium_is_best(self, sigmas: float = 2.0) -> bool:
        """No perturbation improves the payoff by more than *sigmas* standard errors."""
        return all(row.delta_J <= sigmas * row.se for row in self.rows)


def deviation_test(
    policy: FeedbackPolicy,
    traj: MomentTrajectory,
    p: ValidatedParams,
    cfg: SimConfig,
    epsilons: Sequence[float],
    *,
    gain: Gain = Gain.Q_MEAN,
    player: Player = Player.PRODUCER,
) -> DeviationTable:
    """Payoff change of *player* when one feedback coefficient moves by each epsilon.

    Both arms use the same normals, so ``delta_J`` carries a paired standard
    error and is exactly zero at ``epsilon = 0``.
    """
    i = player.index
    rows = []
    for eps in epsilons:
        run_cfg = dataclasses.replace(cfg, deviation=DeviationSpec(gain, float(eps), player))
        _, eq, dev = _simulate_arms(policy, traj, p, run_cfg)
        assert dev is not None
        diff = dev.J_paths[:, i] - eq.J_paths[:, i]
        delta = float(diff.mean() + dev.penalty[i] - eq.penalty[i])
        se = float(diff.std(ddof=1) / math.sqrt(len(diff)))
        rows.append(
            DeviationRow(
                epsilon=float(eps),
                delta_J=delta,
                se=se,
                J_equilibrium=float(eq.J_paths[:, i].mean() + eq.penalty[i]),
                J_deviation=float(dev.J_paths[:, i].mean() + dev.penalty[i]),
            )
        )
        logger.info("deviation_evaluated", gain=str(gain), epsilon=eps, delta_J=delta, se=se)
    return DeviationTable(player=player, gain=gain, rows=tuple(rows))


# ---------------------------------------------------------------------------
# Acceptance bands
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class McCheck:
    """One estimate compared with its semi-explicit reference."""

    name: str
    estimate: float
    reference: float
    se: float
    band: float

    @property
    def passed(self) -> bool:
        return abs(self.estimate - self.reference) <= self.band * self.se

    @property
    def z_score(self) -> float:
        if self.se == 0:
            return 0.0 if self.estimate == self.reference else math.inf
        return (self.estimate - self.reference) / self.se


@dataclass(frozen=True, slots=True)
class McValidation:
    estimate: McEstimate
    checks: tuple[McCheck, ...]
    identity_rel_error: float
    identity_rtol: float

    @property
    def identity_passed(self) -> bool:
        return self.identity_rel_error <= self.identity_rtol

    @property
    def passed(self) -> bool:
        return self.identity_passed and all(check.passed for check in self.checks)

    def failures(self) -> list[McCheck]:
        return [check for check in self.checks if not check.passed]


def relative_gap(a: float, b: float, *, floor: float = 0.0) -> float:
    """``|a - b|`` over the largest of ``|a|``, ``|b|`` and *floor*; zero when equal.

    A reference value of exactly zero therefore yields a finite gap.
    """
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b), floor, np.finfo(float).tiny)


def validate(
    report: EquilibriumReport,
    cfg: SimConfig,
    *,
    payoff_band: float = 3.0,
    moment_band: float = 4.0,
    identity_rtol: float = 1e-10,
) -> McValidation:
    """Simulate the equilibrium of *report* and check it against the ODE values."""
    p = report.params
    estimate = simulate_equilibrium(report.policy, report.moments, p, cfg)
    traj = report.moments
    checks = [
        McCheck("J_p", estimate.J_p_hat, report.J_p_star, estimate.se_p, payoff_band),
        McCheck("J_c", estimate.J_c_hat, report.J_c_star, estimate.se_c, payoff_band),
    ]
    for m in estimate.moments:
        k = traj.grid.node_index(m.t)
        checks += [
            McCheck(f"qbar@{m.t:g}", m.mean[0], traj.qbar[k], m.mean_se[0], moment_band),
            McCheck(f"cbar@{m.t:g}", m.mean[1], traj.cbar[k], m.mean_se[1], moment_band),
            McCheck(f"Vq@{m.t:g}", m.var[0], traj.var_q[k], m.var_se[0], moment_band),
            McCheck(f"Vc@{m.t:g}", m.var[1], traj.var_c[k], m.var_se[1], moment_band),
            McCheck(f"Covqc@{m.t:g}", m.cov, traj.cov_qc[k], m.cov_se, moment_band),
        ]
    a, b = estimate.integrated_var_spot, estimate.integrated_var_identity
    # without noise both sides are rounding residue at the scale of E[S]^2
    spot_scale = float(np.mean(traj.spot_mean.values**2)) * p.T
    rel = relative_gap(a, b, floor=IDENTITY_FLOOR * spot_scale)
    result = McValidation(
        estimate=estimate,
        checks=tuple(checks),
        identity_rel_error=rel,
        identity_rtol=identity_rtol,
    )
    logger.info(
        "mc_validation",
        passed=result.passed,
        failures=[check.name for check in result.failures()],
        identity_rel_error=rel,
    )
    return result
