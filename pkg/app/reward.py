"""Per-block payouts of pools that run PPS and PPLNS side by side.

A dual-scheme pool pays a fraction ``1 - z`` of its hash power per share (PPS) and
the remaining ``z`` proportionally when a block is found (PPLNS). The manager can
split a found block in three ways:

* strategy 1: split R over the whole pool, so a PPLNS miner gets R * lambda / Lambda;
* strategy 2: pay PPLNS miners on total hash rate, which works out to the same amount;
* strategy 3: refill the PPS bucket first, then split what is left over the PPLNS slice.

The optimizer assumes strategy 1 or 2; strategy 3 is only reachable from here and
from the ``payout`` CLI inspector.
"""

from __future__ import annotations

from dataclasses import dataclass

from app.errors import InputError


class ZeroPoolHashrate(InputError):
    def __init__(self) -> None:
        super().__init__("pool_hashrate must be positive")


class BucketDeficit(InputError):
    """The PPS bucket owes more than the block pays."""

    def __init__(self, block_reward: float, pps_paid: float) -> None:
        super().__init__(
            f"PPS paid since last block ({pps_paid!r}) exceeds the block reward ({block_reward!r})"
        )
        self.block_reward = block_reward
        self.pps_paid = pps_paid


class InvalidPpsFraction(InputError):
    def __init__(self, value: float) -> None:
        super().__init__(f"pps_fraction must lie in (0, 1], got {value!r}")
        self.value = value


class NegativePpsPaid(InputError):
    def __init__(self, value: float) -> None:
        super().__init__(f"pps_paid_since_last_block must be non-negative, got {value!r}")
        self.value = value


class NegativeMinerRate(InputError):
    def __init__(self, value: float) -> None:
        super().__init__(f"miner_rate must be non-negative, got {value!r}")
        self.value = value


class OutsidePplnsSlice(InputError):
    """The miner's rate does not fit in the pool's PPLNS share."""

    def __init__(self, miner_rate: float, slice_rate: float) -> None:
        super().__init__(f"miner_rate {miner_rate!r} exceeds pps_fraction * pool_hashrate = {slice_rate!r}")
        self.miner_rate = miner_rate
        self.slice_rate = slice_rate


@dataclass(frozen=True, slots=True)
class DualSchemeContext:
    block_reward: float
    pps_fraction: float
    pool_hashrate: float
    miner_rate: float
    pps_paid_since_last_block: float = 0.0

    def __post_init__(self) -> None:
        if self.pps_paid_since_last_block < 0:
            raise NegativePpsPaid(self.pps_paid_since_last_block)
        if self.miner_rate < 0:
            raise NegativeMinerRate(self.miner_rate)
        # out-of-range fractions and empty pools are reported by the strategies
        if 0.0 < self.pps_fraction <= 1.0 and self.pool_hashrate > 0:
            slice_rate = self.pps_fraction * self.pool_hashrate
            if self.miner_rate > slice_rate:
                raise OutsidePplnsSlice(self.miner_rate, slice_rate)


def _proportional(ctx: DualSchemeContext) -> float:
    if not ctx.pool_hashrate > 0:
        raise ZeroPoolHashrate()
    return ctx.block_reward * ctx.miner_rate / ctx.pool_hashrate


def strategy1_reward(ctx: DualSchemeContext) -> float:
    """Split the block over the whole pool."""
    return _proportional(ctx)


def strategy2_reward(ctx: DualSchemeContext) -> float:
    """Pay PPLNS miners on the pool's total hash rate."""
    return _proportional(ctx)


def strategy3_reward(ctx: DualSchemeContext) -> float:
    """Refill the PPS bucket, then split the rest over the PPLNS slice."""
    if not ctx.pool_hashrate > 0:
        raise ZeroPoolHashrate()
    if not 0.0 < ctx.pps_fraction <= 1.0:
        raise InvalidPpsFraction(ctx.pps_fraction)
    if ctx.pps_paid_since_last_block > ctx.block_reward:
        raise BucketDeficit(ctx.block_reward, ctx.pps_paid_since_last_block)
    remainder = ctx.block_reward - ctx.pps_paid_since_last_block
    return remainder * ctx.miner_rate / (ctx.pps_fraction * ctx.pool_hashrate)


STRATEGIES = {
    1: strategy1_reward,
    2: strategy2_reward,
    3: strategy3_reward,
}
