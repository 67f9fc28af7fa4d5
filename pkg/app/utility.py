"""CARA expected-utility objectives, expected payoffs and a Monte-Carlo cross-check.

Every objective is evaluated by a :class:`UtilityKernel` that lays the decision out
as a vector of fractions: each entry is the allocated power divided by the miner's
power for that entry's algorithm. Values are reported in original units.

Single-currency variants keep solo mining implicit (whatever power is not placed in
a pool); multi-currency variants carry an explicit solo variable per currency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import structlog

from app.domain import Allocation, ProblemInstance
from app.errors import InputError

LOGGER = structlog.get_logger(__name__)

FEASIBILITY_TOL = 1e-12
MC_CHUNK = 250_000


class InvalidVariant(InputError):
    pass


class MissingPpsPool(InputError):
    def __init__(self, detail: str = "no PPS pool available for the PPS variant") -> None:
        super().__init__(detail)


class InfeasibleAllocation(InputError):
    def __init__(self, label: str, residual: float) -> None:
        super().__init__(f"allocation violates {label} (residual {residual!r})")
        self.label = label
        self.residual = residual


class AllocationMismatch(InputError):
    def __init__(self, key: str) -> None:
        super().__init__(f"allocation entry {key!r} is not a decision variable of this objective")
        self.key = key


class ZeroDraws(InputError):
    def __init__(self, draws: int) -> None:
        super().__init__(f"draws must be at least 1, got {draws}")
        self.draws = draws


class Variant(str, Enum):
    SINGLE_PPLNS = "single_pplns"
    SINGLE_WITH_PPS = "single_with_pps"
    MULTI_CURRENCY = "multi_currency"
    MULTI_CURRENCY_TXFEES = "multi_currency_txfees"
    MULTI_POW = "multi_pow"

    @property
    def single(self) -> bool:
        return self in (Variant.SINGLE_PPLNS, Variant.SINGLE_WITH_PPS)


class VariableKind(str, Enum):
    POOL = "pool"
    SOLO = "solo"
    PPS = "pps"


@dataclass(frozen=True, slots=True)
class DecisionVariable:
    kind: VariableKind
    key: str
    currency: str
    algorithm: str

    @property
    def label(self) -> str:
        return f"{self.kind.value}.{self.key}"


@dataclass(frozen=True, slots=True)
class Residual:
    label: str
    value: float


@dataclass(frozen=True, slots=True)
class ObjectiveSpec:
    variant: Variant
    instance: ProblemInstance
    pps_pool: str | None = None
    include_tx_fees: bool = False

    def __post_init__(self) -> None:
        instance = self.instance
        if self.variant.single and len(instance.currencies) != 1:
            raise InvalidVariant(
                f"{self.variant.value} needs exactly one currency, got {len(instance.currencies)}"
            )
        if self.variant is Variant.MULTI_POW:
            powers = instance.miner.power_by_algorithm
            if len(powers) < 2:
                raise InvalidVariant("multi_pow needs at least two algorithms in the miner's power map")
            if any(power <= 0 for power in powers.values()):
                raise InvalidVariant("multi_pow needs positive power for every algorithm")
        if self.pps_pool is not None:
            if self.variant is not Variant.SINGLE_WITH_PPS:
                raise InvalidVariant(f"pps_pool is only meaningful for {Variant.SINGLE_WITH_PPS.value}")
            try:
                pool = instance.pool(self.pps_pool)
            except KeyError as exc:
                raise MissingPpsPool(f"pps_pool {self.pps_pool!r} is not in the instance") from exc
            if not pool.is_pps:
                raise MissingPpsPool(f"pool {self.pps_pool!r} does not pay per share")

    @property
    def tx_fees(self) -> bool:
        if self.variant is Variant.MULTI_CURRENCY_TXFEES:
            return True
        return self.variant is Variant.MULTI_POW and self.include_tx_fees


def build_objective(
    instance: ProblemInstance,
    variant: Variant,
    *,
    pps_pool: str | None = None,
    include_tx_fees: bool = False,
) -> ObjectiveSpec:
    """Build an :class:`ObjectiveSpec`, choosing the cheapest PPS pool when needed."""
    pps_pools = [pool for pool in instance.pools if pool.is_pps]
    if variant is Variant.SINGLE_WITH_PPS:
        if pps_pool is None:
            if not pps_pools:
                raise MissingPpsPool()
            # min() keeps the first pool on equal fees
            pps_pool = min(pps_pools, key=lambda pool: pool.fee).id
        dropped = [pool.id for pool in pps_pools if pool.id != pps_pool]
        if dropped:
            LOGGER.warning("utility.pps_dropped", kept=pps_pool, dropped=dropped)
    elif pps_pools:
        LOGGER.warning(
            "utility.pps_ignored", variant=variant.value, pools=[pool.id for pool in pps_pools]
        )
    return ObjectiveSpec(variant, instance, pps_pool=pps_pool, include_tx_fees=include_tx_fees)


@dataclass(frozen=True, slots=True)
class _Group:
    label: str
    members: tuple[int, ...]
    capacity: float
    scale: float | None


class UtilityKernel:
    """Vectorized evaluation of one objective over normalized allocations."""

    def __init__(
        self,
        instance: ProblemInstance,
        variant: Variant,
        *,
        pps_pool: str | None = None,
        tx_fees: bool = False,
    ) -> None:
        self.instance = instance
        self.variant = variant
        self.rho = instance.miner.rho
        powers = instance.miner.power_by_algorithm
        single = variant.single

        variables: list[DecisionVariable] = []
        for pool in instance.pools:
            if pool.is_pps:
                continue
            currency = instance.currency(pool.currency)
            variables.append(DecisionVariable(VariableKind.POOL, pool.id, currency.id, currency.algorithm))
        if variant is Variant.SINGLE_WITH_PPS:
            if pps_pool is None:
                raise MissingPpsPool()
            pool = instance.pool(pps_pool)
            currency = instance.currency(pool.currency)
            variables.append(DecisionVariable(VariableKind.PPS, pool.id, currency.id, currency.algorithm))
        if not single:
            for currency in instance.currencies:
                variables.append(DecisionVariable(VariableKind.SOLO, currency.id, currency.id, currency.algorithm))
        self.variables = tuple(variables)
        n = len(variables)

        self.power = np.ones(n)
        self.hashrate = np.ones(n)
        self.reward_net = np.zeros(n)
        self.weight = np.ones(n)
        self.block_rate = np.ones(n)
        for j, var in enumerate(variables):
            currency = instance.currency(var.currency)
            power = powers[var.algorithm]
            self.power[j] = power if power > 0 else 1.0
            if single:
                self.block_rate[j] = 1.0 / currency.total_hashrate
            else:
                self.weight[j] = 1.0 / (currency.block_time * currency.total_hashrate)
                self.block_rate[j] = self.weight[j]
            reward = currency.block_reward
            if var.kind is VariableKind.SOLO:
                if tx_fees and currency.solo_tx_fees:
                    reward = reward + currency.avg_tx_fee
                self.reward_net[j] = reward
                continue
            pool = instance.pool(var.key)
            if tx_fees and pool.pays_tx_fees:
                reward = reward + currency.avg_tx_fee
            self.reward_net[j] = reward * (1.0 - pool.fee)
            if var.kind is VariableKind.POOL:
                self.hashrate[j] = pool.hashrate

        self._pool = self._indices(VariableKind.POOL)
        self._solo = self._indices(VariableKind.SOLO)
        self._pps = self._indices(VariableKind.PPS)
        # pool hash rate in units of the miner's power
        self._ratio = self.hashrate[self._pool] / self.power[self._pool]
        self._exponent = self.rho * self.reward_net[self._pool]
        self._solo_gain = -np.expm1(-self.rho * self.reward_net[self._solo])

        self.implicit_solo = single
        if single:
            currency = instance.currencies[0]
            miner_power = powers[currency.algorithm]
            self._implicit_power = miner_power if miner_power > 0 else 1.0
            self._implicit_capacity = 1.0 if miner_power > 0 else 0.0
            self._implicit_reward = currency.block_reward
            self._implicit_gain = -math.expm1(-self.rho * currency.block_reward)
            self._implicit_rate = 1.0 / currency.total_hashrate
            self.currency_id = currency.id

        self.groups = self._build_groups()
        self._members = [np.asarray(group.members, dtype=np.intp) for group in self.groups]

    def _indices(self, kind: VariableKind) -> np.ndarray:
        return np.asarray([j for j, var in enumerate(self.variables) if var.kind is kind], dtype=np.intp)

    def _build_groups(self) -> tuple[_Group, ...]:
        if self.variant is Variant.MULTI_POW:
            return (_Group("budget.shared", tuple(range(len(self.variables))), 1.0, None),)
        groups = []
        for algorithm in dict.fromkeys(var.algorithm for var in self.variables):
            members = tuple(j for j, var in enumerate(self.variables) if var.algorithm == algorithm)
            power = self.instance.miner.power_by_algorithm[algorithm]
            groups.append(
                _Group(
                    f"budget.{algorithm}",
                    members,
                    1.0 if power > 0 else 0.0,
                    power if power > 0 else 1.0,
                )
            )
        if not groups and self.implicit_solo:
            algorithm = self.instance.currencies[0].algorithm
            power = self.instance.miner.power_by_algorithm[algorithm]
            groups.append(_Group(f"budget.{algorithm}", (), 1.0 if power > 0 else 0.0, power if power > 0 else 1.0))
        return tuple(groups)

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def zero_power(self) -> bool:
        return all(group.capacity == 0.0 for group in self.groups)

    # -- evaluation -------------------------------------------------------------

    def value(self, x: np.ndarray) -> np.ndarray | float:
        """Utility of normalized allocation(s); ``x`` has shape (n,) or (k, n).

        Pool terms continue along their tangent for negative entries, so the
        solver sees a smooth objective just outside the nonnegativity bounds.
        """
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[:-1])
        if self._pool.size:
            xp = x[..., self._pool]
            pos = np.maximum(xp, 0.0)
            share = pos / (pos + self._ratio)
            curve = (pos + self._ratio) * -np.expm1(-self._exponent * share)
            # tangent continuation below zero: slope at the origin is the exponent
            curve = curve + self._exponent * np.minimum(xp, 0.0)
            terms = self.weight[self._pool] * self.power[self._pool] * curve
            total = total + terms.sum(axis=-1)
        if self._solo.size:
            xs = x[..., self._solo]
            terms = self.weight[self._solo] * self.power[self._solo] * xs * self._solo_gain
            total = total + terms.sum(axis=-1)
        if self._pps.size:
            xq = x[..., self._pps]
            # steady income: linear in the allocated power
            terms = self.power[self._pps] * xq * self.rho * self.reward_net[self._pps]
            total = total + terms.sum(axis=-1)
        if self.implicit_solo:
            remainder = self._implicit_capacity - x.sum(axis=-1)
            total = total + self._implicit_power * remainder * self._implicit_gain
        return total if total.ndim else float(total)

    def expected_payoff(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        lam = self.power * x
        payoff = math.fsum(lam * self.reward_net * self.block_rate)
        if self.implicit_solo:
            remainder = self._implicit_power * (self._implicit_capacity - float(x.sum()))
            payoff += remainder * self._implicit_reward * self._implicit_rate
        return payoff

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Budget then nonnegativity residuals in normalized units."""
        x = np.asarray(x, dtype=float)
        budgets = [group.capacity - float(x[members].sum()) for group, members in zip(self.groups, self._members, strict=True)]
        return np.concatenate([np.asarray(budgets, dtype=float), x])

    def residual_labels(self) -> list[str]:
        return [group.label for group in self.groups] + [f"nonneg.{var.label}" for var in self.variables]

    def original_residuals(self, x: np.ndarray) -> list[Residual]:
        x = np.asarray(x, dtype=float)
        out = []
        for group, value in zip(self.groups, self.residuals(x)[: len(self.groups)], strict=True):
            out.append(Residual(group.label, value * group.scale if group.scale is not None else value))
        for var, lam in zip(self.variables, self.power * x, strict=True):
            out.append(Residual(f"nonneg.{var.label}", float(lam)))
        return out

    def check_feasible(self, x: np.ndarray) -> None:
        for label, value in zip(self.residual_labels(), self.residuals(x), strict=True):
            if value < -FEASIBILITY_TOL:
                raise InfeasibleAllocation(label, float(value))

    # -- conversions ------------------------------------------------------------

    def vector(self, alloc: Allocation) -> np.ndarray:
        x = np.zeros(self.n)
        pool_keys = set()
        for j, var in enumerate(self.variables):
            if var.kind is VariableKind.POOL:
                lam = alloc.pool_alloc.get(var.key, 0.0)
                pool_keys.add(var.key)
            elif var.kind is VariableKind.SOLO:
                lam = alloc.solo_alloc.get(var.key, 0.0)
            else:
                lam = alloc.pps_alloc
            x[j] = lam / self.power[j]
        for key, lam in alloc.pool_alloc.items():
            if key not in pool_keys and lam != 0.0:
                raise AllocationMismatch(key)
        if alloc.pps_alloc != 0.0 and not self._pps.size:
            raise AllocationMismatch("pps")
        if not self.implicit_solo:
            known = {var.key for var in self.variables if var.kind is VariableKind.SOLO}
            for key, lam in alloc.solo_alloc.items():
                if key not in known and lam != 0.0:
                    raise AllocationMismatch(f"solo.{key}")
        return x

    def allocation(self, x: np.ndarray) -> Allocation:
        """Allocation in h/s; single-currency variants report the solo remainder."""
        lam = self.power * np.asarray(x, dtype=float)
        pool_alloc = {pool.id: 0.0 for pool in self.instance.pools}
        solo_alloc: dict[str, float] = {}
        pps_alloc = 0.0
        for var, value in zip(self.variables, lam, strict=True):
            if var.kind is VariableKind.POOL:
                pool_alloc[var.key] = float(value)
            elif var.kind is VariableKind.SOLO:
                solo_alloc[var.key] = float(value)
            else:
                pool_alloc.pop(var.key, None)
                pps_alloc = float(value)
        if self.implicit_solo:
            remainder = self._implicit_power * self._implicit_capacity - math.fsum(lam)
            solo_alloc[self.currency_id] = max(remainder, 0.0)
        return Allocation(pool_alloc, solo_alloc, pps_alloc)

    def risk_neutral_solo(self) -> np.ndarray:
        """Best all-solo point when rho = 0 (all zeros when solo is implicit)."""
        x = np.zeros(self.n)
        if self.implicit_solo or not self._solo.size or self.zero_power:
            return x
        for group, members in zip(self.groups, self._members, strict=True):
            solo = np.intersect1d(members, self._solo)
            if not solo.size or group.capacity == 0.0:
                continue
            value = self.weight[solo] * self.power[solo] * self.reward_net[solo]
            # argmax returns the first maximum, i.e. the first listed currency on ties
            x[solo[int(np.argmax(value))]] = group.capacity
        return x

    def equal_split(self) -> np.ndarray:
        """Each budget shared evenly by its options, implicit solo counted as one."""
        x = np.zeros(self.n)
        extra = 1 if self.implicit_solo else 0
        for group, members in zip(self.groups, self._members, strict=True):
            if members.size:
                x[members] = group.capacity / (members.size + extra)
        return x

    # -- Monte-Carlo ------------------------------------------------------------

    def poisson_components(
        self, x: np.ndarray, horizon: float
    ) -> tuple[np.ndarray, np.ndarray, float, float]:
        """Means and per-block payouts of the independent block counts.

        Returns ``(means, payouts, deterministic, scale)`` where utility equals
        ``scale * (sum(means * (1 - exp(-rho * payouts))) + rho * deterministic)``.
        """
        x = np.asarray(x, dtype=float)
        factor = 1.0 if self.implicit_solo else horizon
        means: list[float] = []
        payouts: list[float] = []
        for j in self._pool:
            xj = x[j]
            ratio = self.hashrate[j] / self.power[j]
            share = xj / (xj + ratio)
            means.append(self.power[j] * (xj + ratio) * self.block_rate[j] * factor)
            payouts.append(self.reward_net[j] * share)
        for j in self._solo:
            means.append(self.power[j] * x[j] * self.block_rate[j] * factor)
            payouts.append(self.reward_net[j])
        deterministic = 0.0
        for j in self._pps:
            deterministic += self.power[j] * x[j] * self.reward_net[j] * self.block_rate[j]
        if self.implicit_solo:
            remainder = self._implicit_power * (self._implicit_capacity - float(x.sum()))
            means.append(remainder * self._implicit_rate)
            payouts.append(self._implicit_reward)
            scale = 1.0 / self._implicit_rate
        else:
            scale = 1.0 / horizon
        return np.asarray(means), np.asarray(payouts), deterministic, scale


def kernel_for(spec: ObjectiveSpec, variant: Variant | None = None, *, tx_fees: bool | None = None) -> UtilityKernel:
    variant = variant or spec.variant
    pps_pool = spec.pps_pool if variant is Variant.SINGLE_WITH_PPS else None
    return UtilityKernel(
        spec.instance,
        variant,
        pps_pool=pps_pool,
        tx_fees=spec.tx_fees if tx_fees is None else tx_fees,
    )


def _checked(kernel: UtilityKernel, alloc: Allocation) -> np.ndarray:
    x = kernel.vector(alloc)
    kernel.check_feasible(x)
    return x


def utility_single_pplns(alloc: Allocation, spec: ObjectiveSpec) -> float:
    if not spec.variant.single:
        raise InvalidVariant(f"{spec.variant.value} is not a single-currency objective")
    kernel = kernel_for(spec, Variant.SINGLE_PPLNS, tx_fees=False)
    return float(kernel.value(_checked(kernel, alloc)))


def utility_single_with_pps(alloc: Allocation, spec: ObjectiveSpec) -> float:
    if spec.variant is not Variant.SINGLE_WITH_PPS or spec.pps_pool is None:
        raise MissingPpsPool()
    kernel = kernel_for(spec, Variant.SINGLE_WITH_PPS, tx_fees=False)
    return float(kernel.value(_checked(kernel, alloc)))


def utility_multi_currency(alloc: Allocation, spec: ObjectiveSpec, include_tx_fees: bool = False) -> float:
    variant = Variant.MULTI_POW if spec.variant is Variant.MULTI_POW else Variant.MULTI_CURRENCY
    kernel = kernel_for(spec, variant, tx_fees=include_tx_fees)
    return float(kernel.value(_checked(kernel, alloc)))


def evaluate_utility(alloc: Allocation, spec: ObjectiveSpec) -> float:
    """Utility under the objective ``spec.variant`` selects."""
    kernel = kernel_for(spec)
    return float(kernel.value(_checked(kernel, alloc)))


def expected_payoff(alloc: Allocation, spec: ObjectiveSpec) -> float:
    """Expected USD per block (single currency) or per second (multi-currency)."""
    kernel = kernel_for(spec)
    return kernel.expected_payoff(_checked(kernel, alloc))


def constraint_residuals(alloc: Allocation, spec: ObjectiveSpec) -> list[Residual]:
    kernel = kernel_for(spec)
    return kernel.original_residuals(kernel.vector(alloc))


@dataclass(frozen=True, slots=True)
class MonteCarloEstimate:
    estimate: float
    std_error: float
    compare_value: float
    factors: tuple[float, ...]
    assembled_utility: float
    draws: int
    seed: int
    scale: float = 1.0

    @property
    def deviation(self) -> float:
        return abs(self.estimate - self.compare_value)

    def within(self, sigmas: float = 3.0) -> bool:
        return self.deviation <= sigmas * self.std_error

    @property
    def implied_utility(self) -> float:
        """Utility the sampled mean maps back to; nan if the mean is not negative."""
        if not self.estimate < 0.0:
            return float("nan")
        return -self.scale * math.log(-self.estimate)


def _combine(
    count: int, mean: float, m2: float, chunk_count: int, chunk_mean: float, chunk_m2: float
) -> tuple[int, float, float]:
    total = count + chunk_count
    delta = chunk_mean - mean
    mean = mean + delta * chunk_count / total
    m2 = m2 + chunk_m2 + delta * delta * count * chunk_count / total
    return total, mean, m2


def monte_carlo_utility(
    alloc: Allocation,
    spec: ObjectiveSpec,
    draws: int,
    seed: int,
    *,
    horizon: float | None = None,
) -> MonteCarloEstimate:
    """Estimate E[-exp(-rho * P)] by sampling independent Poisson block counts.

    The comparison value is assembled from the moment generating function of each
    component, E[exp(w N)] = exp(mean * (exp(w) - 1)), with w = -rho * payout.
    """
    if draws < 1:
        raise ZeroDraws(draws)
    kernel = kernel_for(spec)
    x = _checked(kernel, alloc)
    if horizon is None:
        horizon = max(currency.block_time for currency in spec.instance.currencies)
    means, payouts, deterministic, scale = kernel.poisson_components(x, horizon)
    rho = kernel.rho

    exponents = means * -np.expm1(-rho * payouts)
    factors = tuple(float(v) for v in np.exp(-exponents))
    total_exponent = float(exponents.sum()) + rho * deterministic
    compare_value = -math.exp(-total_exponent)

    rng = np.random.default_rng(seed)
    count, mean, m2 = 0, 0.0, 0.0
    remaining = draws
    while remaining:
        size = min(MC_CHUNK, remaining)
        counts = rng.poisson(means, size=(size, means.size))
        payoff = counts @ payouts + deterministic
        samples = -np.exp(-rho * payoff)
        chunk_mean = float(samples.mean())
        chunk_m2 = float(((samples - chunk_mean) ** 2).sum())
        count, mean, m2 = _combine(count, mean, m2, size, chunk_mean, chunk_m2)
        remaining -= size

    std_error = math.sqrt(m2 / (count - 1)) / math.sqrt(count) if count > 1 else 0.0
    LOGGER.info(
        "utility.monte_carlo",
        draws=draws,
        seed=seed,
        estimate=mean,
        std_error=std_error,
        compare_value=compare_value,
    )
    return MonteCarloEstimate(
        estimate=mean,
        std_error=std_error,
        compare_value=compare_value,
        factors=factors,
        assembled_utility=scale * total_exponent,
        draws=draws,
        seed=seed,
        scale=scale,
    )

