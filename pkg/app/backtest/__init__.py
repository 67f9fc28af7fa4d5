"""Historical simulation of passive and actively diversified mining."""

from app.backtest.engine import (
    BacktestConfig,
    BacktestPool,
    BacktestSummary,
    DailyResult,
    RebalanceFailed,
    ReplicationRow,
    ZeroVariance,
    pps_baseline,
    replicate,
    run_active,
    run_passive,
    sharpe,
)
from app.backtest.market import (
    DateNotInSeries,
    EmptyWindow,
    MarketSeries,
    MissingColumn,
    NonMonotoneDates,
    NonPositiveDifficulty,
    ParseError,
    load_market_data,
    network_hashrate,
    pool_hashrate_estimate,
)

__all__ = [
    "BacktestConfig",
    "BacktestPool",
    "BacktestSummary",
    "DailyResult",
    "DateNotInSeries",
    "EmptyWindow",
    "MarketSeries",
    "MissingColumn",
    "NonMonotoneDates",
    "NonPositiveDifficulty",
    "ParseError",
    "RebalanceFailed",
    "ReplicationRow",
    "ZeroVariance",
    "load_market_data",
    "network_hashrate",
    "pool_hashrate_estimate",
    "pps_baseline",
    "replicate",
    "run_active",
    "run_passive",
    "sharpe",
]
