"""Prometheus metrics helpers."""

from __future__ import annotations

from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

REGISTRY = CollectorRegistry()

OBJECTIVE_EVALS = Counter(
    "pool_allocator_objective_evals_total",
    "Objective evaluations performed by the solver",
    registry=REGISTRY,
)

SOLVE_LATENCY = Histogram(
    "pool_allocator_solve_latency_seconds",
    "Wall time of a single solver run",
    buckets=(0.005, 0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0),
    registry=REGISTRY,
)

SOLVE_STATUS = Counter(
    "pool_allocator_solve_status_total",
    "Solver runs grouped by termination status",
    labelnames=("status",),
    registry=REGISTRY,
)

RADIUS_REDUCTIONS = Counter(
    "pool_allocator_radius_reductions_total",
    "Trust-region radius reductions",
    registry=REGISTRY,
)

SWEEP_POINTS = Counter(
    "pool_allocator_sweep_points_total",
    "Risk-aversion sweep points solved",
    labelnames=("variant",),
    registry=REGISTRY,
)

BACKTEST_DAYS = Counter(
    "pool_allocator_backtest_days_total",
    "Days simulated by backtests",
    labelnames=("mode",),
    registry=REGISTRY,
)

BACKTEST_REBALANCES = Counter(
    "pool_allocator_backtest_rebalances_total",
    "Interval-boundary re-optimizations in active backtests",
    registry=REGISTRY,
)


def observe_solve(*, latency_s: float, evals: int, status: str, radius_reductions: int) -> None:
    SOLVE_LATENCY.observe(latency_s)
    OBJECTIVE_EVALS.inc(evals)
    SOLVE_STATUS.labels(status=status).inc()
    RADIUS_REDUCTIONS.inc(radius_reductions)


def observe_sweep_point(variant: str) -> None:
    SWEEP_POINTS.labels(variant=variant).inc()


def observe_backtest(*, mode: str, days: int, rebalances: int = 0) -> None:
    BACKTEST_DAYS.labels(mode=mode).inc(days)
    if rebalances:
        BACKTEST_REBALANCES.inc(rebalances)


def write_metrics(path: Path) -> None:
    """Write the registry in textfile-collector format."""
    path.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(path), REGISTRY)
