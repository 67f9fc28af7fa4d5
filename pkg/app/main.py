"""Command-line entrypoint: optimize, sweep, scenario, backtest, payout, mgf-check."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

import orjson
import structlog

from app import metrics
from app.allocator import (
    default_rho_grid,
    exchange_rate_scenario,
    optimize,
    solver_config_from_settings,
    sweep_rho,
)
from app.backtest import BacktestConfig, load_market_data, replicate, run_active, run_passive
from app.config import ConfigError, GridModel, LoadedConfig, load_config
from app.errors import AllocatorError, CheckFailed, InputError
from app.render import (
    backtest_text,
    emit,
    frame_text,
    lines_text,
    mgf_lines,
    replication_frame,
    report_lines,
    sweep_frame,
)
from app.reward import STRATEGIES, DualSchemeContext
from app.settings import Settings, get_settings
from app.utility import build_objective, kernel_for, monte_carlo_utility

LOGGER = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CHECK = 2


def _orjson_dumps(obj: Any, **kwargs: Any) -> str:
    return orjson.dumps(obj, option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS, **kwargs).decode()


def _stderr_logger(*args: Any) -> structlog.PrintLogger:
    # looked up per logger; sys.stderr may have been swapped since configure
    return structlog.PrintLogger(file=sys.stderr)


def configure_logging(log_level: str, log_format: str = "json") -> None:
    numeric_level = logging.getLevelName(log_level.upper())
    if isinstance(numeric_level, str):
        numeric_level = logging.INFO
    logging.basicConfig(level=numeric_level, format="%(message)s", stream=sys.stderr)
    renderer = (
        structlog.dev.ConsoleRenderer() if log_format == "console" else structlog.processors.JSONRenderer(serializer=_orjson_dumps)
    )
    structlog.configure(
        processors=[
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric_level),
        # stdout carries reports
        logger_factory=_stderr_logger,
        cache_logger_on_first_use=False,
    )


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="problem file (.yaml, .json or .toml)")
    common.add_argument("--out", type=Path, default=None, help="output file (directory for backtest); stdout if omitted")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="config override")
    common.add_argument("--jobs", type=int, default=None, help="parallel sweep points")
    common.add_argument("--seed", type=int, default=None, help="Monte-Carlo seed")

    parser = _Parser(prog="pool-allocator", description="Hash-power allocation across mining pools")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("optimize", parents=[common], help="optimal allocation for one rho")
    commands.add_parser("sweep", parents=[common], help="allocations over a rho grid")
    commands.add_parser("scenario", parents=[common], help="sweep under overridden exchange rates")
    commands.add_parser("backtest", parents=[common], help="passive vs active historical simulation")
    commands.add_parser("payout", parents=[common], help="per-block payout of a dual-scheme pool")
    commands.add_parser("mgf-check", parents=[common], help="closed-form utility vs Monte-Carlo")
    return parser


def _load(args: argparse.Namespace) -> LoadedConfig:
    return load_config(args.config, args.overrides)


def _grid(loaded: LoadedConfig) -> tuple[float, ...] | list[float]:
    grid = loaded.model.run.rho_grid
    if grid is None:
        return default_rho_grid()
    if isinstance(grid, GridModel):
        return default_rho_grid(grid.points, grid.min, grid.max)
    return grid


def cmd_optimize(args: argparse.Namespace, settings: Settings) -> int:
    loaded = _load(args)
    run = loaded.model.run
    report = optimize(
        loaded.instance(),
        run.variant,
        None,
        loaded.solver_config(solver_config_from_settings()),
        pps_pool=run.pps_pool,
        include_tx_fees=run.include_tx_fees,
    )
    emit(lines_text(report_lines(report)), args.out)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    loaded = _load(args)
    run = loaded.model.run
    series = sweep_rho(
        loaded.instance(),
        run.variant,
        _grid(loaded),
        loaded.solver_config(solver_config_from_settings()),
        jobs=args.jobs,
        pps_pool=run.pps_pool,
        include_tx_fees=run.include_tx_fees,
    )
    emit(frame_text(sweep_frame(series)), args.out)
    return EXIT_OK


def cmd_scenario(args: argparse.Namespace, settings: Settings) -> int:
    loaded = _load(args)
    run = loaded.model.run
    rates = loaded.model.scenario.rates
    if not rates:
        raise ConfigError("no exchange-rate overrides given", source=loaded.path, field_path="scenario.rates")
    series = exchange_rate_scenario(
        loaded.instance(),
        run.variant,
        rates,
        _grid(loaded),
        loaded.solver_config(solver_config_from_settings()),
        jobs=args.jobs,
        pps_pool=run.pps_pool,
        include_tx_fees=run.include_tx_fees,
    )
    emit(frame_text(sweep_frame(series)), args.out)
    return EXIT_OK


def cmd_backtest(args: argparse.Namespace, settings: Settings) -> int:
    loaded = _load(args)
    section = loaded.model.backtest
    if section is None:
        raise ConfigError("section is required", source=loaded.path, field_path="backtest")
    pool_ids = [pool.id for pool in section.pools]
    series = load_market_data(loaded.resolve(section.market_data), pool_ids)
    config = BacktestConfig.with_defaults(
        miner_power=section.miner_power,
        rho=section.rho,
        interval_days=section.interval_days,
        pools=[(pool.id, pool.fee) for pool in section.pools],
        pps_fee=section.pps_fee,
        smoothing_window=section.smoothing_window,
        period=section.period,
        passive_pool=section.passive_pool,
    )
    solver_config = loaded.solver_config(solver_config_from_settings())

    outputs: dict[str, str] = {}
    if section.mode in {"passive", "both"}:
        outputs["passive_summary.csv"] = backtest_text(run_passive(config, series))
    if section.mode in {"active", "both"}:
        outputs["active_summary.csv"] = backtest_text(run_active(config, series, solver_config))
    if section.replicate is not None:
        rows = replicate(config, series, section.replicate.field, section.replicate.values, solver_config)
        outputs["replication.csv"] = frame_text(replication_frame(rows))

    for name, text in outputs.items():
        if args.out is None:
            emit(f"# {name}\n{text}", None)
        else:
            emit(text, args.out / name)
    return EXIT_OK


def cmd_payout(args: argparse.Namespace, settings: Settings) -> int:
    loaded = _load(args)
    section = loaded.model.payout
    if section is None:
        raise ConfigError("section is required", source=loaded.path, field_path="payout")
    ctx = DualSchemeContext(
        block_reward=section.block_reward,
        pps_fraction=section.pps_fraction,
        pool_hashrate=section.pool_hashrate,
        miner_rate=section.miner_rate,
        pps_paid_since_last_block=section.pps_paid_since_last_block,
    )
    reward = STRATEGIES[section.strategy](ctx)
    emit(lines_text([f"strategy={section.strategy}", f"reward={reward:.12g}"]), args.out)
    return EXIT_OK


def cmd_mgf_check(args: argparse.Namespace, settings: Settings) -> int:
    loaded = _load(args)
    run = loaded.model.run
    mgf = loaded.model.mgf
    spec = build_objective(loaded.instance(), run.variant, pps_pool=run.pps_pool, include_tx_fees=run.include_tx_fees)
    kernel = kernel_for(spec)
    if mgf.allocation == "equal_split":
        allocation = kernel.allocation(kernel.equal_split())
    elif mgf.allocation == "solo":
        allocation = kernel.allocation(kernel.risk_neutral_solo())
    else:
        allocation = mgf.allocation.to_allocation()
    draws = settings.mc_draws if mgf.draws is None else mgf.draws
    seed = args.seed if args.seed is not None else (settings.mc_seed if mgf.seed is None else mgf.seed)
    estimate = monte_carlo_utility(allocation, spec, draws, seed, horizon=mgf.horizon)
    emit(lines_text(mgf_lines(estimate, mgf.sigmas)), args.out)
    if not estimate.within(mgf.sigmas):
        raise CheckFailed(
            f"Monte-Carlo estimate {estimate.estimate:.12g} is more than {mgf.sigmas:g} standard errors "
            f"from the closed form {estimate.compare_value:.12g}"
        )
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, Settings], int]] = {
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "scenario": cmd_scenario,
    "backtest": cmd_backtest,
    "payout": cmd_payout,
    "mgf-check": cmd_mgf_check,
}


def main(argv: Sequence[str] | None = None) -> int:
    settings = get_settings()
    configure_logging(settings.log_level, settings.log_format)
    try:
        args = build_parser().parse_args(argv)
        code = COMMANDS[args.command](args, settings)
    except CheckFailed as exc:
        LOGGER.error("cli.check_failed", error=str(exc))
        print(f"check failed: {exc}", file=sys.stderr)
        code = EXIT_CHECK
    except (AllocatorError, FileNotFoundError, OSError) as exc:
        LOGGER.error("cli.input_error", error=str(exc), kind=type(exc).__name__)
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        LOGGER.exception("cli.unexpected_error")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_INPUT
    finally:
        if settings.metrics_enabled and settings.metrics_file is not None:
            metrics.write_metrics(settings.metrics_file)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
