"""Problem-file loading: YAML, JSON or TOML validated by pydantic models."""

from __future__ import annotations

import copy
import tomllib
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from threading import RLock
from typing import Any, Literal

import orjson
import structlog
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.domain import (
    Allocation,
    CurrencySpec,
    MinerProfile,
    PoolSpec,
    ProblemInstance,
    RewardScheme,
    cara_from_crra,
    validate_catalog,
)
from app.errors import InputError
from app.solver import SolverConfig, StartKind
from app.utility import Variant

LOGGER = structlog.get_logger(__name__)

_RAW_CACHE: dict[Path, tuple[float, dict[str, Any]]] = {}
_RAW_LOCK = RLock()

SHORTHANDS = {"rho": "run.rho", "variant": "run.variant", "seed": "mgf.seed", "draws": "mgf.draws"}


class ConfigError(InputError):
    def __init__(self, message: str, *, source: Path | None = None, field_path: str | None = None) -> None:
        prefix = f"{source}: " if source is not None else ""
        where = f"{field_path}: " if field_path else ""
        super().__init__(f"{prefix}{where}{message}")
        self.source = source
        self.field_path = field_path


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CurrencyModel(_Model):
    id: str
    algorithm: str
    block_time: float
    total_hashrate: float
    block_reward: float | None = None
    coin_reward: float | None = None
    exchange_rate: float = 1.0
    avg_tx_fee: float = 0.0
    solo_tx_fees: bool = True

    @model_validator(mode="after")
    def _one_reward(self) -> CurrencyModel:
        if (self.block_reward is None) == (self.coin_reward is None):
            raise ValueError("give exactly one of block_reward (USD) or coin_reward (coins)")
        return self

    def to_spec(self) -> CurrencySpec:
        reward = self.block_reward if self.block_reward is not None else self.coin_reward * self.exchange_rate
        return CurrencySpec(
            id=self.id,
            algorithm=self.algorithm,
            block_reward=reward,
            block_time=self.block_time,
            total_hashrate=self.total_hashrate,
            exchange_rate=self.exchange_rate,
            avg_tx_fee=self.avg_tx_fee,
            solo_tx_fees=self.solo_tx_fees,
        )


class PoolModel(_Model):
    id: str
    currency: str
    hashrate: float
    fee: float
    scheme: RewardScheme = RewardScheme.PPLNS_LIKE
    pays_tx_fees: bool = False
    pps_fraction: float = 1.0

    def to_spec(self) -> PoolSpec:
        return PoolSpec(
            id=self.id,
            currency=self.currency,
            hashrate=self.hashrate,
            fee=self.fee,
            scheme=self.scheme,
            pays_tx_fees=self.pays_tx_fees,
            pps_fraction=self.pps_fraction,
        )


class MinerModel(_Model):
    # a bare number means "all power on the only algorithm"
    power: float | dict[str, float]
    rho: float | None = None
    crra: float | None = None
    wealth: float | None = None

    @model_validator(mode="after")
    def _preferences(self) -> MinerModel:
        if (self.crra is None) != (self.wealth is None):
            raise ValueError("crra and wealth must be given together")
        return self


class SolverModel(_Model):
    rho_begin: float | None = None
    rho_end: float | None = None
    max_evals: int | None = None
    start: StartKind | None = None
    user_start: list[float] | None = None

    def to_config(self, base: SolverConfig) -> SolverConfig:
        return SolverConfig(
            rho_begin=base.rho_begin if self.rho_begin is None else self.rho_begin,
            rho_end=base.rho_end if self.rho_end is None else self.rho_end,
            max_evals=base.max_evals if self.max_evals is None else self.max_evals,
            start=base.start if self.start is None else self.start,
            user_start=None if self.user_start is None else tuple(self.user_start),
        )


class GridModel(_Model):
    points: int = 40
    min: float = 1e-6
    max: float = 1e-4


class RunModel(_Model):
    variant: Variant = Variant.SINGLE_PPLNS
    rho: float | None = None
    pps_pool: str | None = None
    include_tx_fees: bool = False
    rho_grid: list[float] | GridModel | None = None
    solver: SolverModel = Field(default_factory=SolverModel)


class ScenarioModel(_Model):
    rates: dict[str, float] = Field(default_factory=dict)


class AllocationModel(_Model):
    pools: dict[str, float] = Field(default_factory=dict)
    solo: dict[str, float] = Field(default_factory=dict)
    pps: float = 0.0

    def to_allocation(self) -> Allocation:
        return Allocation(self.pools, self.solo, self.pps)


class MgfModel(_Model):
    # None falls back to MC_DRAWS / MC_SEED
    draws: int | None = None
    seed: int | None = None
    horizon: float | None = None
    allocation: Literal["equal_split", "solo"] | AllocationModel = "equal_split"
    sigmas: float = 3.0


class PayoutModel(_Model):
    strategy: Literal[1, 2, 3] = 1
    block_reward: float
    pool_hashrate: float
    miner_rate: float
    pps_fraction: float = 1.0
    pps_paid_since_last_block: float = 0.0


class BacktestPoolModel(_Model):
    id: str
    fee: float = 0.0


class ReplicationModel(_Model):
    field: Literal["rho", "miner_power", "interval_days", "smoothing_window", "pools", "period"]
    values: list[Any]


class BacktestModel(_Model):
    market_data: Path
    miner_power: float
    rho: float
    interval_days: int = 3
    pools: list[BacktestPoolModel]
    pps_fee: float | None = None
    smoothing_window: int | None = None
    period: tuple[date, date] | None = None
    mode: Literal["passive", "active", "both"] = "both"
    passive_pool: str | None = None
    replicate: ReplicationModel | None = None


class ProblemFile(_Model):
    currencies: list[CurrencyModel] = Field(default_factory=list)
    pools: list[PoolModel] = Field(default_factory=list)
    miner: MinerModel | None = None
    run: RunModel = Field(default_factory=RunModel)
    scenario: ScenarioModel = Field(default_factory=ScenarioModel)
    mgf: MgfModel = Field(default_factory=MgfModel)
    payout: PayoutModel | None = None
    backtest: BacktestModel | None = None


@dataclass(frozen=True, slots=True)
class LoadedConfig:
    path: Path
    model: ProblemFile

    def instance(self) -> ProblemInstance:
        """Validated instance; ``run.rho`` wins over the miner's own risk aversion."""
        model = self.model
        if model.miner is None:
            raise ConfigError("section is required", source=self.path, field_path="miner")
        currencies = [currency.to_spec() for currency in model.currencies]
        miner = model.miner
        if isinstance(miner.power, dict):
            powers = dict(miner.power)
        else:
            algorithms = list(dict.fromkeys(currency.algorithm for currency in currencies))
            if len(algorithms) != 1:
                raise ConfigError(
                    "a single power value needs exactly one algorithm; give a mapping instead",
                    source=self.path,
                    field_path="miner.power",
                )
            powers = {algorithms[0]: miner.power}

        rho = model.run.rho if model.run.rho is not None else miner.rho
        if rho is None and miner.crra is not None:
            profile = MinerProfile.from_preferences(powers, crra=miner.crra, wealth=miner.wealth)
        elif rho is not None and miner.crra is not None and model.run.rho is None:
            profile = MinerProfile(powers, rho, wealth=miner.wealth, crra=miner.crra)
        else:
            if miner.crra is not None and rho is not None:
                LOGGER.info("config.rho_override", implied=cara_from_crra(miner.crra, miner.wealth), rho=rho)
            profile = MinerProfile(powers, 0.0 if rho is None else rho)
        return validate_catalog(currencies, [pool.to_spec() for pool in model.pools], profile)

    def solver_config(self, base: SolverConfig) -> SolverConfig:
        return self.model.run.solver.to_config(base)

    def resolve(self, relative: Path) -> Path:
        return relative if relative.is_absolute() else (self.path.parent / relative)


def _read_raw(resolved: Path) -> dict[str, Any]:
    text = resolved.read_text(encoding="utf-8")
    suffix = resolved.suffix.lower()
    try:
        if suffix in {".yaml", ".yml"}:
            data = yaml.safe_load(text)
        elif suffix == ".json":
            data = orjson.loads(text)
        elif suffix == ".toml":
            data = tomllib.loads(text)
        else:
            raise ConfigError(f"unsupported config format {suffix!r}", source=resolved)
    except (yaml.YAMLError, orjson.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse: {exc}", source=resolved) from exc
    if data is None:
        raise ConfigError("file is empty", source=resolved)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", source=resolved)
    return data


def load_raw(path: Path, *, use_cache: bool = True) -> dict[str, Any]:
    """Parsed mapping of a config file, cached by path and mtime. Returns a copy."""
    resolved = path.resolve()
    try:
        mtime = resolved.stat().st_mtime
    except FileNotFoundError as exc:
        raise ConfigError("file not found", source=resolved) from exc

    if use_cache:
        with _RAW_LOCK:
            cached = _RAW_CACHE.get(resolved)
            if cached and cached[0] == mtime:
                return copy.deepcopy(cached[1])

    data = _read_raw(resolved)
    with _RAW_LOCK:
        _RAW_CACHE[resolved] = (mtime, data)
    return copy.deepcopy(data)


def parse_override(item: str) -> tuple[str, Any]:
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value {raw!r}: {exc}", field_path=key) from exc
    # YAML 1.1 reads 1e-4 and 125e12 as strings
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            pass
    return key, value


def _child(container: Any, segment: str, path: str) -> Any:
    if isinstance(container, list):
        for entry in container:
            if isinstance(entry, dict) and str(entry.get("id")) == segment:
                return entry
        if segment.isdigit() and int(segment) < len(container):
            return container[int(segment)]
        raise ConfigError(f"no record with id {segment!r}", field_path=path)
    if isinstance(container, dict):
        return container.setdefault(segment, {})
    raise ConfigError("cannot descend into a scalar", field_path=path)


def apply_overrides(data: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``KEY=VALUE`` overrides in place; list records are addressed by id."""
    for item in overrides:
        key, value = parse_override(item)
        key = SHORTHANDS.get(key, key)
        if key == "miner.power":
            miner = data.setdefault("miner", {})
            current = miner.get("power")
            if isinstance(current, dict) and len(current) == 1 and not isinstance(value, dict):
                miner["power"] = {next(iter(current)): value}
            else:
                miner["power"] = value
            continue
        segments = key.split(".")
        target: Any = data
        for depth, segment in enumerate(segments[:-1]):
            target = _child(target, segment, ".".join(segments[: depth + 1]))
        last = segments[-1]
        if isinstance(target, list):
            if not last.isdigit() or int(last) >= len(target):
                raise ConfigError("list entries are addressed by id", field_path=key)
            target[int(last)] = value
        elif isinstance(target, dict):
            target[last] = value
        else:
            raise ConfigError("cannot assign into a scalar", field_path=key)
        LOGGER.debug("config.override", key=key, value=value)
    return data


def _field_path(loc: Iterable[Any], data: Mapping[str, Any]) -> str:
    parts: list[str] = []
    node: Any = data
    for item in loc:
        if isinstance(item, int) and isinstance(node, list) and item < len(node):
            entry = node[item]
            parts.append(str(entry.get("id", item)) if isinstance(entry, dict) else str(item))
            node = entry
        else:
            parts.append(str(item))
            node = node.get(item) if isinstance(node, dict) else None
    return ".".join(parts)


def validate_config(data: dict[str, Any], *, source: Path | None = None) -> ProblemFile:
    try:
        return ProblemFile.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], source=source, field_path=_field_path(first["loc"], data)) from exc


def load_config(path: Path, overrides: Iterable[str] = (), *, use_cache: bool = True) -> LoadedConfig:
    data = apply_overrides(load_raw(path, use_cache=use_cache), overrides)
    resolved = path.resolve()
    model = validate_config(data, source=resolved)
    LOGGER.debug("config.loaded", path=str(resolved), variant=model.run.variant.value)
    return LoadedConfig(path=resolved, model=model)


class CatalogEntry(_Model):
    name: str
    coin: str
    reward_types: list[str]
    hashrate: float
    unit: str = "H/s"

    @property
    def pays_per_share(self) -> bool:
        return any(kind.upper() in {"PPS", "FPPS"} for kind in self.reward_types)


class PoolCatalog(_Model):
    pools: list[CatalogEntry]

    def for_coin(self, coin: str) -> list[CatalogEntry]:
        return [entry for entry in self.pools if entry.coin == coin]


def load_pool_catalog(path: Path) -> PoolCatalog:
    data = load_raw(path)
    try:
        return PoolCatalog.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], source=path.resolve(), field_path=_field_path(first["loc"], data)) from exc
