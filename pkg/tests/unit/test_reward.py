from __future__ import annotations

import pytest

from app.reward import (
    STRATEGIES,
    BucketDeficit,
    DualSchemeContext,
    InvalidPpsFraction,
    NegativeMinerRate,
    NegativePpsPaid,
    OutsidePplnsSlice,
    ZeroPoolHashrate,
    strategy1_reward,
    strategy2_reward,
    strategy3_reward,
)


def _ctx(**overrides: float) -> DualSchemeContext:
    values = {
        "block_reward": 45441.0,
        "pps_fraction": 0.7,
        "pool_hashrate": 4040e15,
        "miner_rate": 3000e12,
        "pps_paid_since_last_block": 20000.0,
    }
    values.update(overrides)
    return DualSchemeContext(**values)


def test_strategy_one_is_proportional() -> None:
    ctx = _ctx()
    assert strategy1_reward(ctx) == pytest.approx(45441.0 * 3000e12 / 4040e15)


def test_strategy_two_direct_substitution() -> None:
    ctx = DualSchemeContext(block_reward=100.0, pps_fraction=0.5, pool_hashrate=100.0, miner_rate=25.0)
    assert strategy2_reward(ctx) == 25.0
    assert strategy2_reward(_ctx(miner_rate=0.0)) == 0.0


def test_strategy_three_refills_bucket_first() -> None:
    expected = (45441.0 - 20000.0) * 3000e12 / (0.7 * 4040e15)
    assert strategy3_reward(_ctx()) == pytest.approx(expected)


def test_strategy_three_matches_proportional_when_bucket_is_balanced() -> None:
    # PPS payouts equal to the PPS share of the block leave the PPLNS slice untouched
    ctx = _ctx(pps_paid_since_last_block=0.3 * 45441.0)
    assert strategy3_reward(ctx) == pytest.approx(strategy1_reward(ctx), rel=1e-12)


def test_strategy_three_with_pure_pplns_pool() -> None:
    ctx = _ctx(pps_fraction=1.0, pps_paid_since_last_block=0.0)
    assert strategy3_reward(ctx) == pytest.approx(strategy1_reward(ctx))


def test_bucket_deficit() -> None:
    with pytest.raises(BucketDeficit) as exc:
        strategy3_reward(_ctx(pps_paid_since_last_block=50_000.0))
    assert exc.value.pps_paid == 50_000.0


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
def test_invalid_pps_fraction(fraction: float) -> None:
    with pytest.raises(InvalidPpsFraction):
        strategy3_reward(_ctx(pps_fraction=fraction))


@pytest.mark.parametrize("strategy", sorted(STRATEGIES))
def test_zero_pool_hashrate(strategy: int) -> None:
    with pytest.raises(ZeroPoolHashrate):
        STRATEGIES[strategy](_ctx(pool_hashrate=0.0))


def test_negative_pps_paid_rejected() -> None:
    with pytest.raises(NegativePpsPaid):
        _ctx(pps_paid_since_last_block=-1.0)


def test_negative_miner_rate_rejected() -> None:
    with pytest.raises(NegativeMinerRate):
        _ctx(miner_rate=-1.0)


def test_miner_must_fit_in_pplns_slice() -> None:
    with pytest.raises(OutsidePplnsSlice) as exc:
        _ctx(pps_fraction=0.5, pool_hashrate=100.0, miner_rate=60.0)
    assert exc.value.slice_rate == 50.0
    assert _ctx(pps_fraction=0.5, pool_hashrate=100.0, miner_rate=50.0).miner_rate == 50.0


@pytest.mark.parametrize("strategy", sorted(STRATEGIES))
def test_rates_scaled_together_leave_payout_unchanged(strategy: int) -> None:
    base = _ctx()
    scaled = _ctx(pool_hashrate=4040e15 * 1e3, miner_rate=3000e12 * 1e3)
    assert STRATEGIES[strategy](scaled) == pytest.approx(STRATEGIES[strategy](base), rel=1e-12)


@pytest.mark.parametrize("strategy", sorted(STRATEGIES))
def test_payout_scales_with_block_reward(strategy: int) -> None:
    base = _ctx()
    # strategy 3 scales in the reward and the bucket together
    doubled = _ctx(block_reward=2 * 45441.0, pps_paid_since_last_block=2 * 20000.0)
    assert STRATEGIES[strategy](doubled) == pytest.approx(2.0 * STRATEGIES[strategy](base), rel=1e-12)
