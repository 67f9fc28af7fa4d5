"""Problem instances shared by unit and acceptance tests."""

from __future__ import annotations

from app.domain import CurrencySpec, MinerProfile, PoolSpec, ProblemInstance, RewardScheme, validate_catalog

BTC_REWARD = 12.5 * 3635.28
BCH_REWARD = 12.5 * 123.76
BTC_NETWORK = 42.33e18


def small_pools(rho: float = 1e-4, power: float = 40.0) -> ProblemInstance:
    currency = CurrencySpec(id="coin", algorithm="sha256d", block_reward=50_000.0, block_time=600.0, total_hashrate=1_111_040.0)
    pools = [
        PoolSpec("pool1", "coin", 1e6, 0.02),
        PoolSpec("pool2", "coin", 1e5, 0.02),
        PoolSpec("pool3", "coin", 1e4, 0.01),
        PoolSpec("pool4", "coin", 1e3, 0.0),
    ]
    return validate_catalog([currency], pools, MinerProfile({"sha256d": power}, rho))


def bitcoin_pools(rho: float = 5e-5, power: float = 3000e12, *, with_pps: bool = False) -> ProblemInstance:
    currency = CurrencySpec(
        id="BTC", algorithm="sha256d", block_reward=BTC_REWARD, block_time=600.0, total_hashrate=BTC_NETWORK, exchange_rate=3635.28
    )
    pools = [
        PoolSpec("slush", "BTC", 4040e15, 0.02),
        PoolSpec("viabtc", "BTC", 3090e15, 0.02),
        PoolSpec("kano", "BTC", 48e15, 0.009),
    ]
    if with_pps:
        pools.append(PoolSpec("pps", "BTC", 1000e15, 0.04, scheme=RewardScheme.PPS))
    return validate_catalog([currency], pools, MinerProfile({"sha256d": power}, rho))


def btc_bch(rho: float = 5e-5, bch_rate: float = 123.76) -> ProblemInstance:
    btc = CurrencySpec(
        id="BTC", algorithm="sha256d", block_reward=BTC_REWARD, block_time=600.0, total_hashrate=BTC_NETWORK, exchange_rate=3635.28
    )
    bch = CurrencySpec(
        id="BCH", algorithm="sha256d", block_reward=BCH_REWARD, block_time=600.0, total_hashrate=1.43e18, exchange_rate=123.76
    )
    pools = [
        PoolSpec("slush", "BTC", 4040e15, 0.02),
        PoolSpec("viabtc_bch", "BCH", 135e15, 0.02),
        PoolSpec("kano", "BTC", 48e15, 0.009),
    ]
    instance = validate_catalog([btc, bch], pools, MinerProfile({"sha256d": 3000e12}, rho))
    return instance.with_exchange_rates({"BCH": bch_rate}) if bch_rate != 123.76 else instance


def multi_pow(rho: float = 5e-5) -> ProblemInstance:
    btc = CurrencySpec(
        id="BTC", algorithm="sha256d", block_reward=BTC_REWARD, block_time=600.0, total_hashrate=BTC_NETWORK, avg_tx_fee=250.0
    )
    ltc = CurrencySpec(id="LTC", algorithm="scrypt", block_reward=812.5, block_time=150.0, total_hashrate=300e12, avg_tx_fee=5.0)
    pools = [
        PoolSpec("slush", "BTC", 4040e15, 0.02),
        PoolSpec("kano", "BTC", 48e15, 0.009, pays_tx_fees=True),
        PoolSpec("litecoinpool", "LTC", 45e12, 0.0, pays_tx_fees=True),
        PoolSpec("f2pool_ltc", "LTC", 60e12, 0.03),
    ]
    return validate_catalog([btc, ltc], pools, MinerProfile({"sha256d": 3000e12, "scrypt": 1.5e12}, rho))

