"""Validated domain records shared by the allocator, utility and backtest code.

Units: hash power in hashes/second, money in USD, time in seconds. A pool's
``hashrate`` never includes the candidate miner; the objectives add the miner's
own power explicitly.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from datetime import date
from enum import Enum
from types import MappingProxyType

from app.errors import InputError

CRRA_WEALTH_TOLERANCE = 1e-9


class EmptyInput(InputError):
    def __init__(self, what: str) -> None:
        super().__init__(f"{what} must not be empty")
        self.what = what


class UnknownCurrency(InputError):
    def __init__(self, currency: str, record: str) -> None:
        super().__init__(f"{record} references unknown currency {currency!r}")
        self.currency = currency
        self.record = record


class UnknownAlgorithm(InputError):
    def __init__(self, algorithm: str, record: str) -> None:
        super().__init__(f"{record} uses algorithm {algorithm!r} with no miner power configured")
        self.algorithm = algorithm
        self.record = record


class DuplicateId(InputError):
    def __init__(self, kind: str, record_id: str) -> None:
        super().__init__(f"duplicate {kind} id {record_id!r}")
        self.kind = kind
        self.record = record_id


class OutOfRangeField(InputError):
    def __init__(self, field_name: str, record: str, value: object) -> None:
        super().__init__(f"{record}: field {field_name!r} out of range ({value!r})")
        self.field = field_name
        self.record = record
        self.value = value


class NonPositiveWealth(InputError):
    def __init__(self, wealth: float) -> None:
        super().__init__(f"wealth must be positive, got {wealth!r}")
        self.wealth = wealth


class RewardScheme(str, Enum):
    PPLNS_LIKE = "pplns_like"
    PPS = "pps"


def _check(ok: bool, field_name: str, record: str, value: object) -> None:
    if not ok or (isinstance(value, float) and math.isnan(value)):
        raise OutOfRangeField(field_name, record, value)


@dataclass(frozen=True, slots=True)
class PowAlgorithm:
    id: str

    def __post_init__(self) -> None:
        _check(bool(self.id), "id", "algorithm", self.id)


@dataclass(frozen=True, slots=True)
class CurrencySpec:
    """A cryptocurrency; ``block_reward`` is already expressed in USD."""

    id: str
    algorithm: str
    block_reward: float
    block_time: float
    total_hashrate: float
    exchange_rate: float = 1.0
    avg_tx_fee: float = 0.0
    solo_tx_fees: bool = True

    def __post_init__(self) -> None:
        record = f"currency {self.id!r}"
        _check(bool(self.id), "id", record, self.id)
        _check(bool(self.algorithm), "algorithm", record, self.algorithm)
        _check(self.block_reward >= 0, "block_reward", record, self.block_reward)
        _check(self.block_time > 0, "block_time", record, self.block_time)
        _check(self.total_hashrate > 0, "total_hashrate", record, self.total_hashrate)
        _check(self.avg_tx_fee >= 0, "avg_tx_fee", record, self.avg_tx_fee)
        _check(self.exchange_rate > 0, "exchange_rate", record, self.exchange_rate)

    @property
    def coin_reward(self) -> float:
        return self.block_reward / self.exchange_rate

    def with_exchange_rate(self, rate: float) -> CurrencySpec:
        """Re-derive the USD block reward from the coin reward at ``rate``."""
        _check(rate > 0, "exchange_rate", f"currency {self.id!r}", rate)
        if rate == self.exchange_rate:
            return self
        return replace(self, block_reward=self.coin_reward * rate, exchange_rate=rate)


@dataclass(frozen=True, slots=True)
class PoolSpec:
    id: str
    currency: str
    hashrate: float
    fee: float
    scheme: RewardScheme = RewardScheme.PPLNS_LIKE
    pays_tx_fees: bool = False
    pps_fraction: float = 1.0

    def __post_init__(self) -> None:
        record = f"pool {self.id!r}"
        _check(bool(self.id), "id", record, self.id)
        _check(self.hashrate > 0, "hashrate", record, self.hashrate)
        _check(0.0 <= self.fee <= 1.0, "fee", record, self.fee)
        _check(0.0 <= self.pps_fraction <= 1.0, "pps_fraction", record, self.pps_fraction)

    @property
    def is_pps(self) -> bool:
        return self.scheme is RewardScheme.PPS


def cara_from_crra(crra: float, wealth: float) -> float:
    """Absolute risk aversion implied by relative risk aversion at a wealth level."""
    if not wealth > 0:
        raise NonPositiveWealth(wealth)
    _check(crra > 0, "crra", "miner", crra)
    return crra / wealth


@dataclass(frozen=True, slots=True)
class MinerProfile:
    power_by_algorithm: Mapping[str, float]
    rho: float
    wealth: float | None = None
    crra: float | None = None

    def __post_init__(self) -> None:
        powers = dict(self.power_by_algorithm)
        if not powers:
            raise EmptyInput("miner.power_by_algorithm")
        for algorithm, power in powers.items():
            # zero power is accepted for a switched-off rig; optimize short-circuits it
            _check(power >= 0 and math.isfinite(power), f"power_by_algorithm.{algorithm}", "miner", power)
        _check(self.rho >= 0 and math.isfinite(self.rho), "rho", "miner", self.rho)
        if self.wealth is not None and not self.wealth > 0:
            raise NonPositiveWealth(self.wealth)
        if self.wealth is not None and self.crra is not None:
            implied = cara_from_crra(self.crra, self.wealth)
            if not math.isclose(implied, self.rho, rel_tol=CRRA_WEALTH_TOLERANCE, abs_tol=0.0):
                raise OutOfRangeField("rho", "miner", self.rho)
        object.__setattr__(self, "power_by_algorithm", MappingProxyType(powers))

    @classmethod
    def from_preferences(cls, power_by_algorithm: Mapping[str, float], *, crra: float, wealth: float) -> MinerProfile:
        return cls(power_by_algorithm, cara_from_crra(crra, wealth), wealth=wealth, crra=crra)

    def with_rho(self, rho: float) -> MinerProfile:
        # preference fields no longer describe an overridden rho
        return MinerProfile(self.power_by_algorithm, rho)

    def scaled(self, factor: float) -> MinerProfile:
        powers = {key: value * factor for key, value in self.power_by_algorithm.items()}
        return replace(self, power_by_algorithm=powers)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MinerProfile):
            return NotImplemented
        return (
            dict(self.power_by_algorithm) == dict(other.power_by_algorithm)
            and self.rho == other.rho
            and self.wealth == other.wealth
            and self.crra == other.crra
        )

    def __hash__(self) -> int:
        return hash((tuple(sorted(self.power_by_algorithm.items())), self.rho, self.wealth, self.crra))


@dataclass(frozen=True, slots=True)
class Allocation:
    """Hash power per pool, per-currency solo power and PPS power, in h/s."""

    pool_alloc: Mapping[str, float] = field(default_factory=dict)
    solo_alloc: Mapping[str, float] = field(default_factory=dict)
    pps_alloc: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "pool_alloc", MappingProxyType(dict(self.pool_alloc)))
        object.__setattr__(self, "solo_alloc", MappingProxyType(dict(self.solo_alloc)))

    @property
    def total(self) -> float:
        return math.fsum(self.pool_alloc.values()) + math.fsum(self.solo_alloc.values()) + self.pps_alloc

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Allocation):
            return NotImplemented
        return (
            dict(self.pool_alloc) == dict(other.pool_alloc)
            and dict(self.solo_alloc) == dict(other.solo_alloc)
            and self.pps_alloc == other.pps_alloc
        )

    def __hash__(self) -> int:
        return hash((tuple(sorted(self.pool_alloc.items())), tuple(sorted(self.solo_alloc.items())), self.pps_alloc))


@dataclass(frozen=True, slots=True)
class MarketDay:
    date: date
    exchange_rate: float
    difficulty: float
    coinbase_reward: float
    total_blocks: int
    pool_blocks: Mapping[str, int]

    def __post_init__(self) -> None:
        record = f"market day {self.date.isoformat()}"
        _check(self.difficulty > 0, "difficulty", record, self.difficulty)
        _check(self.exchange_rate >= 0, "exchange_rate", record, self.exchange_rate)
        _check(self.coinbase_reward >= 0, "coinbase_reward", record, self.coinbase_reward)
        _check(self.total_blocks >= 0, "total_blocks", record, self.total_blocks)
        for pool_id, count in self.pool_blocks.items():
            _check(count >= 0, pool_id, record, count)
        _check(sum(self.pool_blocks.values()) <= self.total_blocks, "total_blocks", record, self.total_blocks)
        object.__setattr__(self, "pool_blocks", MappingProxyType(dict(self.pool_blocks)))

    @property
    def block_reward_usd(self) -> float:
        return self.coinbase_reward * self.exchange_rate

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MarketDay):
            return NotImplemented
        return (
            self.date == other.date
            and self.exchange_rate == other.exchange_rate
            and self.difficulty == other.difficulty
            and self.coinbase_reward == other.coinbase_reward
            and self.total_blocks == other.total_blocks
            and dict(self.pool_blocks) == dict(other.pool_blocks)
        )

    def __hash__(self) -> int:
        return hash((self.date, self.total_blocks))


@dataclass(frozen=True, slots=True)
class ProblemInstance:
    """A catalog that passed :func:`validate_catalog`."""

    currencies: tuple[CurrencySpec, ...]
    pools: tuple[PoolSpec, ...]
    miner: MinerProfile

    @property
    def algorithms(self) -> tuple[PowAlgorithm, ...]:
        seen: dict[str, PowAlgorithm] = {}
        for currency in self.currencies:
            seen.setdefault(currency.algorithm, PowAlgorithm(currency.algorithm))
        return tuple(seen.values())

    def currency(self, currency_id: str) -> CurrencySpec:
        for currency in self.currencies:
            if currency.id == currency_id:
                return currency
        raise UnknownCurrency(currency_id, "lookup")

    def pool(self, pool_id: str) -> PoolSpec:
        for pool in self.pools:
            if pool.id == pool_id:
                return pool
        raise KeyError(pool_id)

    def power_for(self, currency_id: str) -> float:
        return self.miner.power_by_algorithm[self.currency(currency_id).algorithm]

    def with_rho(self, rho: float) -> ProblemInstance:
        if rho == self.miner.rho:
            return self
        return replace(self, miner=self.miner.with_rho(rho))

    def with_exchange_rates(self, overrides: Mapping[str, float]) -> ProblemInstance:
        known = {currency.id for currency in self.currencies}
        for currency_id in overrides:
            if currency_id not in known:
                raise UnknownCurrency(currency_id, "exchange-rate override")
        currencies = tuple(
            currency.with_exchange_rate(overrides[currency.id]) if currency.id in overrides else currency
            for currency in self.currencies
        )
        return replace(self, currencies=currencies)

    def scaled(self, factor: float) -> ProblemInstance:
        """Scale every hash rate (miner, pools, network totals) by ``factor``."""
        currencies = tuple(replace(c, total_hashrate=c.total_hashrate * factor) for c in self.currencies)
        pools = tuple(replace(p, hashrate=p.hashrate * factor) for p in self.pools)
        return ProblemInstance(currencies, pools, self.miner.scaled(factor))


def validate_catalog(
    currencies: Sequence[CurrencySpec] | Iterable[CurrencySpec],
    pools: Sequence[PoolSpec] | Iterable[PoolSpec],
    miner: MinerProfile,
) -> ProblemInstance:
    currencies = tuple(currencies)
    pools = tuple(pools)
    if not currencies:
        raise EmptyInput("currencies")
    if not pools:
        raise EmptyInput("pools")

    currency_ids: set[str] = set()
    for currency in currencies:
        if currency.id in currency_ids:
            raise DuplicateId("currency", currency.id)
        currency_ids.add(currency.id)
        if currency.algorithm not in miner.power_by_algorithm:
            raise UnknownAlgorithm(currency.algorithm, f"currency {currency.id!r}")

    pool_ids: set[str] = set()
    for pool in pools:
        if pool.id in pool_ids:
            raise DuplicateId("pool", pool.id)
        pool_ids.add(pool.id)
        if pool.currency not in currency_ids:
            raise UnknownCurrency(pool.currency, f"pool {pool.id!r}")

    return ProblemInstance(currencies=currencies, pools=pools, miner=miner)
