"""Daily blockchain data: CSV ingestion and hash-rate estimates."""

from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import pandas as pd
import structlog

from app.domain import MarketDay
from app.errors import InputError

LOGGER = structlog.get_logger(__name__)

REQUIRED_COLUMNS = ("date", "exchange_rate", "difficulty", "coinbase_reward", "total_blocks")
# hashes per difficulty-1 block over the 600 s target
HASHES_PER_DIFFICULTY = 2.0**32 / 600.0


class ParseError(InputError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonMonotoneDates(InputError):
    def __init__(self, line: int, day: date) -> None:
        super().__init__(f"line {line}: date {day.isoformat()} does not follow the previous row")
        self.line = line
        self.day = day


class MissingColumn(InputError):
    def __init__(self, column: str) -> None:
        super().__init__(f"market data has no column {column!r}")
        self.column = column


class NonPositiveDifficulty(InputError):
    def __init__(self, difficulty: float) -> None:
        super().__init__(f"difficulty must be positive, got {difficulty!r}")
        self.difficulty = difficulty


class EmptyWindow(InputError):
    def __init__(self, pool_id: str, day: date) -> None:
        super().__init__(f"no blocks in the smoothing window ending {day.isoformat()} (pool {pool_id!r})")
        self.pool_id = pool_id
        self.day = day


class DateNotInSeries(InputError):
    def __init__(self, day: date) -> None:
        super().__init__(f"date {day.isoformat()} is not in the series")
        self.day = day


@dataclass(frozen=True, slots=True)
class MarketSeries:
    """Strictly increasing daily rows plus the pool columns they carry."""

    days: tuple[MarketDay, ...]
    pool_ids: tuple[str, ...]
    gaps: tuple[tuple[date, date], ...] = ()

    def __len__(self) -> int:
        return len(self.days)

    def __iter__(self) -> Iterator[MarketDay]:
        return iter(self.days)

    def __getitem__(self, index: int) -> MarketDay:
        return self.days[index]

    def index_of(self, day: date) -> int:
        for index, row in enumerate(self.days):
            if row.date == day:
                return index
        raise DateNotInSeries(day)

    def between(self, start: date, end: date) -> MarketSeries:
        """Rows with ``start <= date <= end``."""
        days = tuple(row for row in self.days if start <= row.date <= end)
        gaps = tuple(gap for gap in self.gaps if start <= gap[0] and gap[1] <= end)
        return MarketSeries(days, self.pool_ids, gaps)


def _number(raw: str, line: int, column: str, *, blank: float | None = None) -> float:
    if raw.strip() == "":
        if blank is None:
            raise ParseError(line, f"{column} is empty")
        return blank
    try:
        value = float(raw)
    except ValueError as exc:
        raise ParseError(line, f"{column}={raw!r} is not a number") from exc
    if not math.isfinite(value):
        raise ParseError(line, f"{column}={raw!r} is not finite")
    return value


def _count(raw: str, line: int, column: str, *, blank: int | None = None) -> int:
    value = _number(raw, line, column, blank=blank)
    if value < 0 or value != int(value):
        raise ParseError(line, f"{column}={raw!r} is not a non-negative integer")
    return int(value)


def load_market_data(path: Path, pools: Sequence[str] | None = None) -> MarketSeries:
    """Read ``date,exchange_rate,difficulty,coinbase_reward,total_blocks,<pool>...``.

    Empty pool cells count as zero blocks; any other empty cell is a
    :class:`ParseError`. Calendar gaps are logged and kept in
    :attr:`MarketSeries.gaps`; they are not errors.
    """
    resolved = path.resolve()
    if not resolved.exists():
        raise FileNotFoundError(f"Market data file {resolved} not found")
    try:
        frame = pd.read_csv(resolved, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(1, str(exc)) from exc
    frame.columns = [str(column).strip() for column in frame.columns]

    for column in REQUIRED_COLUMNS:
        if column not in frame.columns:
            raise MissingColumn(column)
    available = [column for column in frame.columns if column not in REQUIRED_COLUMNS]
    if pools is None:
        pool_ids = tuple(available)
    else:
        for pool_id in pools:
            if pool_id not in frame.columns:
                raise MissingColumn(pool_id)
        pool_ids = tuple(pools)

    days: list[MarketDay] = []
    gaps: list[tuple[date, date]] = []
    # header is line 1
    for line, row in enumerate(frame.itertuples(index=False, name=None), start=2):
        record = dict(zip(frame.columns, row, strict=True))
        try:
            day = date.fromisoformat(record["date"].strip())
        except ValueError as exc:
            raise ParseError(line, f"date={record['date']!r} is not ISO-8601") from exc
        difficulty = _number(record["difficulty"], line, "difficulty")
        if difficulty <= 0:
            raise ParseError(line, f"difficulty={record['difficulty']!r} must be positive")
        pool_blocks = {pool_id: _count(record[pool_id], line, pool_id, blank=0) for pool_id in pool_ids}
        total = _count(record["total_blocks"], line, "total_blocks")
        if sum(pool_blocks.values()) > total:
            raise ParseError(line, f"pool blocks exceed total_blocks={total}")
        if days:
            previous = days[-1].date
            if day <= previous:
                raise NonMonotoneDates(line, day)
            if day - previous > timedelta(days=1):
                gaps.append((previous, day))
                LOGGER.warning("market.gap", after=previous.isoformat(), before=day.isoformat(), line=line)
        exchange_rate = _number(record["exchange_rate"], line, "exchange_rate")
        coinbase = _number(record["coinbase_reward"], line, "coinbase_reward")
        if exchange_rate < 0 or coinbase < 0:
            raise ParseError(line, "exchange_rate and coinbase_reward must be non-negative")
        days.append(
            MarketDay(
                date=day,
                exchange_rate=exchange_rate,
                difficulty=difficulty,
                coinbase_reward=coinbase,
                total_blocks=total,
                pool_blocks=pool_blocks,
            )
        )

    LOGGER.info("market.loaded", path=str(resolved), days=len(days), pools=list(pool_ids), gaps=len(gaps))
    return MarketSeries(tuple(days), pool_ids, tuple(gaps))


def network_hashrate(difficulty: float) -> float:
    """Network hash rate implied by a day's difficulty."""
    if not difficulty > 0:
        raise NonPositiveDifficulty(difficulty)
    return HASHES_PER_DIFFICULTY * difficulty


def pool_hashrate_estimate(series: MarketSeries | Sequence[MarketDay], pool_id: str, day: date, window: int) -> float:
    """Pool share of blocks over the trailing window times the day's network rate.

    The window is truncated at the start of the series.
    """
    if window < 1:
        raise InputError(f"window must be at least 1, got {window}")
    days = series.days if isinstance(series, MarketSeries) else tuple(series)
    end = next((index for index, row in enumerate(days) if row.date == day), None)
    if end is None:
        raise DateNotInSeries(day)
    rows = days[max(0, end - window + 1) : end + 1]
    total = math.fsum(row.total_blocks for row in rows)
    if total == 0:
        raise EmptyWindow(pool_id, day)
    found = math.fsum(row.pool_blocks.get(pool_id, 0) for row in rows)
    return network_hashrate(days[end].difficulty) * found / total
