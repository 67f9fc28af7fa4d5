"""Objective construction, solving and result shaping for every variant."""

from __future__ import annotations

import asyncio
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import structlog

from app import metrics
from app.domain import Allocation, ProblemInstance
from app.errors import AllocatorError, InputError
from app.settings import get_settings
from app.solver import SolverConfig, SolverResult, SolverStatus, StartKind, maximize
from app.utility import UtilityKernel, Variant, build_objective, kernel_for

LOGGER = structlog.get_logger(__name__)

# relative to the miner's power for the affected budget
RESIDUAL_TOLERANCE = 1e-10


class SolverFailed(AllocatorError):
    def __init__(self, result: SolverResult, rho: float) -> None:
        super().__init__(
            f"solver ended with status={result.status.value} feasible={result.feasible} "
            f"max_violation={result.max_violation:.3g} at rho={rho!r}"
        )
        self.result = result
        self.rho = rho


class NonMonotoneGrid(InputError):
    def __init__(self, index: int, value: float) -> None:
        super().__init__(f"rho grid must be finite, non-negative and strictly increasing; entry {index} is {value!r}")
        self.index = index
        self.value = value


class SweepPointFailed(AllocatorError):
    def __init__(self, rho: float, cause: Exception) -> None:
        super().__init__(f"sweep point rho={rho!r} failed: {cause}")
        self.rho = rho
        self.cause = cause


@dataclass(frozen=True, slots=True)
class AllocationReport:
    allocation: Allocation
    utility: float
    expected_payoff: float
    solver: SolverResult
    variant: Variant
    rho: float


@dataclass(frozen=True, slots=True)
class SweepSeries:
    rho_values: tuple[float, ...]
    reports: tuple[AllocationReport, ...]
    variant: Variant

    def __len__(self) -> int:
        return len(self.rho_values)


def solver_config_from_settings() -> SolverConfig:
    settings = get_settings()
    return SolverConfig(
        rho_begin=settings.solver_rho_begin,
        rho_end=settings.solver_rho_end,
        max_evals=settings.solver_max_evals,
        start=StartKind(settings.solver_start),
    )


def default_rho_grid(points: int | None = None, lo: float | None = None, hi: float | None = None) -> tuple[float, ...]:
    """Log-spaced risk-aversion grid, 40 points over [1e-6, 1e-4] unless configured."""
    settings = get_settings()
    points = settings.sweep_points if points is None else points
    lo = settings.sweep_rho_min if lo is None else lo
    hi = settings.sweep_rho_max if hi is None else hi
    if points < 1 or not 0.0 < lo <= hi:
        raise InputError(f"invalid rho grid: points={points} lo={lo!r} hi={hi!r}")
    if points == 1:
        return (float(lo),)
    return tuple(float(v) for v in np.geomspace(lo, hi, points))


def _normalizer(kernel: UtilityKernel) -> float:
    corners = np.vstack([np.eye(kernel.n), np.zeros(kernel.n)])
    scale = float(np.abs(kernel.value(corners)).max())
    return scale if scale > 0.0 and math.isfinite(scale) else 1.0


def _repair(kernel: UtilityKernel, x: np.ndarray, dust_fraction: float) -> np.ndarray:
    """Clip to the feasible region and drop dust components."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    x[x < dust_fraction] = 0.0
    for group in kernel.groups:
        members = np.asarray(group.members, dtype=np.intp)
        if not members.size:
            continue
        used = float(x[members].sum())
        if used > group.capacity:
            x[members] *= group.capacity / used if used > 0.0 else 0.0
    return x


def _check_residuals(kernel: UtilityKernel, x: np.ndarray) -> None:
    residuals = kernel.residuals(x)
    worst = int(np.argmin(residuals))
    if residuals[worst] < -RESIDUAL_TOLERANCE:
        label = kernel.residual_labels()[worst]
        raise AllocatorError(f"repaired allocation violates {label} by {-residuals[worst]:.3g}")


def optimize(
    instance: ProblemInstance,
    variant: Variant,
    rho: float | None = None,
    solver_config: SolverConfig | None = None,
    *,
    pps_pool: str | None = None,
    include_tx_fees: bool = False,
    dust_fraction: float | None = None,
) -> AllocationReport:
    """Maximize the variant's utility for ``instance`` at risk aversion ``rho``.

    ``rho=None`` keeps the miner's own value. At ``rho == 0`` (or when the miner has no
    power) the solo allocation is returned without running the solver.
    """
    if rho is not None:
        instance = instance.with_rho(rho)
    rho = instance.miner.rho
    config = solver_config or solver_config_from_settings()
    dust = get_settings().dust_fraction if dust_fraction is None else dust_fraction

    spec = build_objective(instance, variant, pps_pool=pps_pool, include_tx_fees=include_tx_fees)
    kernel = kernel_for(spec)

    if rho == 0.0 or kernel.zero_power or kernel.n == 0:
        x = kernel.risk_neutral_solo()
        result = SolverResult(
            x=tuple(float(v) for v in x),
            objective=float(kernel.value(x)),
            feasible=True,
            evals=0,
            status=SolverStatus.CONVERGED,
        )
        LOGGER.debug("allocator.short_circuit", variant=variant.value, rho=rho, zero_power=kernel.zero_power)
    else:
        norm = _normalizer(kernel)

        def objective(v: np.ndarray) -> float:
            return float(kernel.value(v)) / norm

        result = maximize(objective, kernel.residuals, kernel.n, config)
        if not result.feasible or result.status is SolverStatus.STALLED:
            raise SolverFailed(result, rho)
        if result.status is SolverStatus.MAX_EVALS:
            LOGGER.warning("allocator.max_evals", variant=variant.value, rho=rho, evals=result.evals)
        x = _repair(kernel, np.asarray(result.x), dust)

    _check_residuals(kernel, x)
    report = AllocationReport(
        allocation=kernel.allocation(x),
        utility=float(kernel.value(x)),
        expected_payoff=max(kernel.expected_payoff(x), 0.0),
        solver=result,
        variant=variant,
        rho=rho,
    )
    LOGGER.info(
        "allocator.optimized",
        variant=variant.value,
        rho=rho,
        utility=report.utility,
        status=result.status.value,
        evals=result.evals,
    )
    return report


def _validate_grid(rho_grid: Sequence[float]) -> tuple[float, ...]:
    grid = tuple(float(v) for v in rho_grid)
    for index, value in enumerate(grid):
        if not math.isfinite(value) or value < 0.0 or (index and value <= grid[index - 1]):
            raise NonMonotoneGrid(index, value)
    return grid


def _solve_point(instance: ProblemInstance, variant: Variant, rho: float, config: SolverConfig, options: dict) -> AllocationReport:
    try:
        report = optimize(instance, variant, rho, config, **options)
    except AllocatorError as exc:
        raise SweepPointFailed(rho, exc) from exc
    metrics.observe_sweep_point(variant.value)
    LOGGER.debug("allocator.sweep.point", variant=variant.value, rho=rho, utility=report.utility)
    return report


async def _fan_out(
    instance: ProblemInstance, variant: Variant, grid: tuple[float, ...], config: SolverConfig, options: dict, jobs: int
) -> list[AllocationReport]:
    semaphore = asyncio.Semaphore(jobs)

    async def run(rho: float) -> AllocationReport:
        async with semaphore:
            return await asyncio.to_thread(_solve_point, instance, variant, rho, config, options)

    # gather keeps grid order
    return await asyncio.gather(*(run(rho) for rho in grid))


def sweep_rho(
    instance: ProblemInstance,
    variant: Variant,
    rho_grid: Sequence[float],
    solver_config: SolverConfig | None = None,
    *,
    jobs: int | None = None,
    pps_pool: str | None = None,
    include_tx_fees: bool = False,
    dust_fraction: float | None = None,
) -> SweepSeries:
    """One independent :func:`optimize` per grid point, no warm starts."""
    grid = _validate_grid(rho_grid)
    config = solver_config or solver_config_from_settings()
    jobs = get_settings().sweep_jobs if jobs is None else jobs
    if jobs < 1:
        raise InputError(f"jobs must be at least 1, got {jobs}")
    options = {"pps_pool": pps_pool, "include_tx_fees": include_tx_fees, "dust_fraction": dust_fraction}
    if jobs == 1 or len(grid) <= 1:
        reports = [_solve_point(instance, variant, rho, config, options) for rho in grid]
    else:
        reports = asyncio.run(_fan_out(instance, variant, grid, config, options, jobs))
    LOGGER.info("allocator.sweep.done", variant=variant.value, points=len(grid), jobs=jobs)
    return SweepSeries(rho_values=grid, reports=tuple(reports), variant=variant)


def exchange_rate_scenario(
    instance: ProblemInstance,
    variant: Variant,
    rate_overrides: Mapping[str, float],
    rho_grid: Sequence[float],
    solver_config: SolverConfig | None = None,
    **options: object,
) -> SweepSeries:
    """Sweep after re-deriving each overridden currency's USD block reward."""
    shifted = instance.with_exchange_rates(rate_overrides)
    LOGGER.info("allocator.scenario", overrides=dict(rate_overrides))
    return sweep_rho(shifted, variant, rho_grid, solver_config, **options)  # type: ignore[arg-type]
