"""Plain-text writers for reports, sweep tables and backtest summaries."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import pandas as pd

from app.allocator import AllocationReport, SweepSeries
from app.backtest.engine import BacktestSummary, ReplicationRow
from app.utility import MonteCarloEstimate

FLOAT_FORMAT = "%.12g"


def _num(value: float) -> str:
    return FLOAT_FORMAT % value


def report_lines(report: AllocationReport) -> list[str]:
    alloc = report.allocation
    lines = [
        f"variant={report.variant.value}",
        f"rho={_num(report.rho)}",
        f"utility={_num(report.utility)}",
        f"expected_payoff={_num(report.expected_payoff)}",
        f"solver.status={report.solver.status.value}",
        f"solver.evals={report.solver.evals}",
        f"solver.feasible={str(report.solver.feasible).lower()}",
    ]
    lines += [f"alloc.{pool_id}={_num(value)}" for pool_id, value in alloc.pool_alloc.items()]
    lines += [f"solo.{currency}={_num(value)}" for currency, value in alloc.solo_alloc.items()]
    lines.append(f"pps={_num(alloc.pps_alloc)}")
    return lines


def sweep_frame(series: SweepSeries) -> pd.DataFrame:
    """One row per rho: rho, utility, expected payoff, then allocations in h/s."""
    has_pps = any(report.allocation.pps_alloc for report in series.reports)
    records = []
    for rho, report in zip(series.rho_values, series.reports, strict=True):
        record: dict[str, float] = {
            "rho": rho,
            "utility": report.utility,
            "expected_payoff": report.expected_payoff,
        }
        record.update(report.allocation.pool_alloc)
        record.update({f"solo.{key}": value for key, value in report.allocation.solo_alloc.items()})
        if has_pps:
            record["pps"] = report.allocation.pps_alloc
        records.append(record)
    if not records:
        return pd.DataFrame(columns=["rho", "utility", "expected_payoff"])
    return pd.DataFrame.from_records(records).fillna(0.0)


def backtest_frame(summary: BacktestSummary) -> pd.DataFrame:
    rows = []
    for day in summary.daily:
        row: dict[str, object] = {"date": day.date.isoformat(), "reward_usd": day.reward_usd}
        if day.allocation is not None:
            row.update({f"alloc_{key}": value for key, value in day.allocation.items()})
        rows.append(row)
    return pd.DataFrame.from_records(rows)


def summary_block(summary: BacktestSummary) -> list[str]:
    return [
        f"P={_num(summary.total_payoff)}",
        f"P_PPS={_num(summary.pps_baseline)}",
        f"sigma={_num(summary.reward_stddev)}",
        f"S={_num(summary.sharpe)}",
    ]


def replication_frame(rows: Sequence[ReplicationRow]) -> pd.DataFrame:
    return pd.DataFrame.from_records(
        [
            {
                "field": row.field,
                "value": row.value if isinstance(row.value, int | float) else "|".join(map(str, row.value)),
                "P_A": row.active_payoff,
                "S_A": row.active_sharpe,
                "P_P": row.passive_payoff,
                "S_P": row.passive_sharpe,
            }
            for row in rows
        ]
    )


def mgf_lines(estimate: MonteCarloEstimate, sigmas: float) -> list[str]:
    lines = [
        f"draws={estimate.draws}",
        f"seed={estimate.seed}",
        f"closed_form={_num(estimate.compare_value)}",
        f"monte_carlo={_num(estimate.estimate)}",
        f"std_error={_num(estimate.std_error)}",
        f"deviation_sigmas={_num(estimate.deviation / estimate.std_error) if estimate.std_error else 'nan'}",
        f"utility={_num(estimate.assembled_utility)}",
        f"implied_utility={_num(estimate.implied_utility)}",
        f"within_{_num(sigmas)}_sigma={str(estimate.within(sigmas)).lower()}",
    ]
    lines += [f"factor.{index}={_num(value)}" for index, value in enumerate(estimate.factors)]
    return lines


def frame_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def backtest_text(summary: BacktestSummary) -> str:
    return frame_text(backtest_frame(summary)) + "\n".join(summary_block(summary)) + "\n"


def emit(text: str, out: Path | None) -> None:
    """Write ``text`` to ``out``, or to stdout when no path is given."""
    if out is None:
        print(text, end="" if text.endswith("\n") else "\n")
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")


def lines_text(lines: Sequence[str]) -> str:
    return "\n".join(lines) + "\n"
