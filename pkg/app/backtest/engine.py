"""Retroactive passive and active mining simulations over daily block data."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from datetime import date
from types import MappingProxyType
from typing import Any

import numpy as np
import structlog

from app import metrics
from app.allocator import optimize
from app.backtest.market import MarketSeries, network_hashrate, pool_hashrate_estimate
from app.domain import CurrencySpec, MinerProfile, PoolSpec, validate_catalog
from app.errors import AllocatorError, InputError
from app.settings import get_settings
from app.solver import SolverConfig
from app.utility import Variant

LOGGER = structlog.get_logger(__name__)

CURRENCY_ID = "BTC"
ALGORITHM = "sha256d"
BLOCK_TIME = 600.0
SOLO_KEY = "solo"


class ZeroVariance(InputError):
    def __init__(self, mean: float) -> None:
        super().__init__(f"daily rewards have zero standard deviation (mean {mean!r}); Sharpe ratio undefined")
        self.mean = mean


class RebalanceFailed(AllocatorError):
    def __init__(self, day: date, cause: Exception) -> None:
        super().__init__(f"re-optimization on {day.isoformat()} failed: {cause}")
        self.day = day
        self.cause = cause


@dataclass(frozen=True, slots=True)
class BacktestPool:
    id: str
    fee: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.fee <= 1.0:
            raise InputError(f"pool {self.id!r}: fee must lie in [0, 1], got {self.fee!r}")


@dataclass(frozen=True, slots=True)
class BacktestConfig:
    miner_power: float
    rho: float
    interval_days: int
    pools: tuple[BacktestPool, ...]
    pps_fee: float = 0.04
    smoothing_window: int = 14
    period: tuple[date, date] | None = None
    passive_pool: str | None = None

    def __post_init__(self) -> None:
        if self.interval_days < 1:
            raise InputError(f"interval_days must be at least 1, got {self.interval_days}")
        if self.smoothing_window < 1:
            raise InputError(f"smoothing_window must be at least 1, got {self.smoothing_window}")
        if not self.miner_power >= 0:
            raise InputError(f"miner_power must be non-negative, got {self.miner_power!r}")
        if not self.rho >= 0:
            raise InputError(f"rho must be non-negative, got {self.rho!r}")
        if not 0.0 <= self.pps_fee <= 1.0:
            raise InputError(f"pps_fee must lie in [0, 1], got {self.pps_fee!r}")
        if not self.pools:
            raise InputError("backtest needs at least one pool")
        if self.period is not None and not self.period[0] < self.period[1]:
            raise InputError(f"period start {self.period[0]} must precede end {self.period[1]}")
        if self.passive_pool is not None and self.passive_pool not in self.fees:
            raise InputError(f"passive_pool {self.passive_pool!r} is not a configured pool")

    @property
    def fees(self) -> dict[str, float]:
        return {pool.id: pool.fee for pool in self.pools}

    @classmethod
    def with_defaults(cls, **values: Any) -> BacktestConfig:
        """Fill ``pps_fee`` and ``smoothing_window`` from settings when not given."""
        settings = get_settings()
        if values.get("pps_fee") is None:
            values["pps_fee"] = settings.backtest_pps_fee
        if values.get("smoothing_window") is None:
            values["smoothing_window"] = settings.backtest_smoothing_window
        values["pools"] = tuple(
            pool if isinstance(pool, BacktestPool) else BacktestPool(pool[0], pool[1]) for pool in values["pools"]
        )
        return cls(**values)


@dataclass(frozen=True, slots=True)
class DailyResult:
    date: date
    reward_usd: float
    network_hashrate: float
    pool_hashrates: Mapping[str, float]
    allocation: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "pool_hashrates", MappingProxyType(dict(self.pool_hashrates)))
        if self.allocation is not None:
            object.__setattr__(self, "allocation", MappingProxyType(dict(self.allocation)))


@dataclass(frozen=True, slots=True)
class BacktestSummary:
    mode: str
    total_payoff: float
    pps_baseline: float
    reward_stddev: float
    sharpe: float
    daily: tuple[DailyResult, ...]
    pools: tuple[str, ...] = field(default=())
    rebalances: int = 0


def sharpe(daily_rewards: Sequence[float], pps_baseline: float) -> float:
    """(sum of rewards - baseline) / population standard deviation of the rewards."""
    rewards = np.asarray(daily_rewards, dtype=float)
    if rewards.size < 2:
        raise InputError(f"Sharpe ratio needs at least two daily values, got {rewards.size}")
    sigma = float(rewards.std(ddof=0))
    mean = float(rewards.mean())
    if sigma <= 1e-12 * max(abs(mean), np.finfo(float).tiny):
        raise ZeroVariance(mean)
    return (math.fsum(rewards) - pps_baseline) / sigma


def _period_indices(config: BacktestConfig, series: MarketSeries) -> list[int]:
    if config.period is None:
        indices = list(range(len(series)))
    else:
        start, end = config.period
        indices = [index for index, row in enumerate(series) if start <= row.date <= end]
    if not indices:
        raise InputError("no market data inside the backtest period")
    return indices


def pps_baseline(config: BacktestConfig, series: MarketSeries) -> float:
    """Expected income had every share been sold to a PPS pool at ``pps_fee``."""
    total = []
    for index in _period_indices(config, series):
        row = series[index]
        rate = network_hashrate(row.difficulty)
        total.append(config.miner_power / rate * row.total_blocks * row.block_reward_usd * (1.0 - config.pps_fee))
    return math.fsum(total)


def _pool_share(power: float, estimate: float) -> float:
    denominator = power + estimate
    return power / denominator if denominator > 0.0 else 0.0


def _summarize(
    mode: str, config: BacktestConfig, series: MarketSeries, daily: list[DailyResult], pools: Sequence[str], rebalances: int = 0
) -> BacktestSummary:
    rewards = [day.reward_usd for day in daily]
    baseline = pps_baseline(config, series)
    ratio = sharpe(rewards, baseline)
    summary = BacktestSummary(
        mode=mode,
        total_payoff=math.fsum(rewards),
        pps_baseline=baseline,
        reward_stddev=float(np.asarray(rewards).std(ddof=0)),
        sharpe=ratio,
        daily=tuple(daily),
        pools=tuple(pools),
        rebalances=rebalances,
    )
    metrics.observe_backtest(mode=mode, days=len(daily), rebalances=rebalances)
    LOGGER.info(
        "backtest.done",
        mode=mode,
        days=len(daily),
        payoff=summary.total_payoff,
        pps_baseline=baseline,
        sharpe=ratio,
    )
    return summary


def run_passive(config: BacktestConfig, series: MarketSeries, pool_id: str | None = None) -> BacktestSummary:
    """All power on one pool for the whole period."""
    pool_id = pool_id or config.passive_pool or config.pools[0].id
    if pool_id not in series.pool_ids:
        raise InputError(f"pool {pool_id!r} has no column in the market data")
    if pool_id not in config.fees:
        raise InputError(f"pool {pool_id!r} is not a configured backtest pool")
    fee = config.fees[pool_id]
    power = config.miner_power
    daily = []
    for index in _period_indices(config, series):
        row = series[index]
        estimate = pool_hashrate_estimate(series, pool_id, row.date, config.smoothing_window)
        reward = _pool_share(power, estimate) * (1.0 - fee) * row.pool_blocks[pool_id] * row.block_reward_usd
        daily.append(
            DailyResult(
                date=row.date,
                reward_usd=reward,
                network_hashrate=network_hashrate(row.difficulty),
                pool_hashrates={pool_id: estimate},
            )
        )
    return _summarize("passive", config, series, daily, [pool_id])


def _rebalance(
    config: BacktestConfig, day: date, estimates: Mapping[str, float], reward: float, rate: float, solver_config: SolverConfig | None
) -> dict[str, float]:
    allocation = {pool.id: 0.0 for pool in config.pools}
    candidates = [pool for pool in config.pools if estimates.get(pool.id, 0.0) > 0.0]
    if not candidates or config.miner_power == 0.0:
        allocation[SOLO_KEY] = config.miner_power
        return allocation
    currency = CurrencySpec(
        id=CURRENCY_ID, algorithm=ALGORITHM, block_reward=reward, block_time=BLOCK_TIME, total_hashrate=rate
    )
    pools = [PoolSpec(id=pool.id, currency=CURRENCY_ID, hashrate=estimates[pool.id], fee=pool.fee) for pool in candidates]
    instance = validate_catalog([currency], pools, MinerProfile({ALGORITHM: config.miner_power}, config.rho))
    try:
        report = optimize(instance, Variant.SINGLE_PPLNS, config.rho, solver_config)
    except AllocatorError as exc:
        raise RebalanceFailed(day, exc) from exc
    allocation.update(report.allocation.pool_alloc)
    allocation[SOLO_KEY] = report.allocation.solo_alloc.get(CURRENCY_ID, 0.0)
    LOGGER.debug("backtest.rebalance", date=day.isoformat(), allocation=allocation)
    return allocation


def run_active(config: BacktestConfig, series: MarketSeries, solver_config: SolverConfig | None = None) -> BacktestSummary:
    """Re-optimize every ``interval_days`` days and hold the allocation in between."""
    pool_ids = [pool.id for pool in config.pools if pool.id in series.pool_ids]
    if not pool_ids:
        raise InputError("none of the configured pools has a column in the market data")
    fees = config.fees
    daily = []
    allocation: dict[str, float] = {}
    rebalances = 0
    for position, index in enumerate(_period_indices(config, series)):
        row = series[index]
        rate = network_hashrate(row.difficulty)
        estimates = {
            pool_id: pool_hashrate_estimate(series, pool_id, row.date, config.smoothing_window) for pool_id in pool_ids
        }
        if position % config.interval_days == 0:
            allocation = _rebalance(config, row.date, estimates, row.block_reward_usd, rate, solver_config)
            rebalances += 1
        terms = [
            _pool_share(allocation.get(pool_id, 0.0), estimates[pool_id])
            * (1.0 - fees[pool_id])
            * row.pool_blocks[pool_id]
            * row.block_reward_usd
            for pool_id in pool_ids
        ]
        terms.append(allocation.get(SOLO_KEY, 0.0) / rate * row.total_blocks * row.block_reward_usd)
        daily.append(
            DailyResult(
                date=row.date,
                reward_usd=math.fsum(terms),
                network_hashrate=rate,
                pool_hashrates=estimates,
                allocation=allocation,
            )
        )
    return _summarize("active", config, series, daily, pool_ids, rebalances)


@dataclass(frozen=True, slots=True)
class ReplicationRow:
    field: str
    value: Any
    active_payoff: float
    active_sharpe: float
    passive_payoff: float
    passive_sharpe: float


REPLICATION_FIELDS = ("rho", "miner_power", "interval_days", "smoothing_window", "pools", "period")


def _varied(config: BacktestConfig, field_name: str, value: Any) -> BacktestConfig:
    if field_name == "pools":
        fees = config.fees
        chosen = tuple(BacktestPool(pool_id, fees.get(pool_id, 0.0)) for pool_id in value)
        passive = config.passive_pool if config.passive_pool in value else None
        return replace(config, pools=chosen, passive_pool=passive)
    if field_name == "period":
        start, end = value
        return replace(config, period=(_as_date(start), _as_date(end)))
    if field_name in {"interval_days", "smoothing_window"}:
        return replace(config, **{field_name: int(value)})
    return replace(config, **{field_name: float(value)})


def _as_date(value: Any) -> date:
    return value if isinstance(value, date) else date.fromisoformat(str(value))


def _payoff_and_sharpe(run: Any, *args: Any) -> tuple[float, float]:
    try:
        summary = run(*args)
    except ZeroVariance as exc:
        LOGGER.warning("backtest.zero_variance", mean=exc.mean)
        return float("nan"), float("nan")
    return summary.total_payoff, summary.sharpe


def replicate(
    config: BacktestConfig,
    series: MarketSeries,
    field_name: str,
    values: Sequence[Any],
    solver_config: SolverConfig | None = None,
) -> list[ReplicationRow]:
    """Re-run both backtests once per value of one parameter.

    A run whose daily rewards never vary reports NaN instead of failing the batch.
    """
    if field_name not in REPLICATION_FIELDS:
        raise InputError(f"cannot replicate over {field_name!r}; choose one of {', '.join(REPLICATION_FIELDS)}")
    rows = []
    for value in values:
        varied = _varied(config, field_name, value)
        active = _payoff_and_sharpe(run_active, varied, series, solver_config)
        passive = _payoff_and_sharpe(run_passive, varied, series)
        rows.append(ReplicationRow(field_name, value, active[0], active[1], passive[0], passive[1]))
        LOGGER.info("backtest.replication", field=field_name, value=str(value), active_payoff=active[0])
    return rows
