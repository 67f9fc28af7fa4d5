"""End-to-end checks of the allocator, the payout formulas and the backtest."""

from __future__ import annotations

import math
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from time import perf_counter

import numpy as np
import pytest

from app.allocator import SweepSeries, default_rho_grid, exchange_rate_scenario, optimize
from app.backtest import BacktestConfig, BacktestPool, load_market_data, network_hashrate, run_active, run_passive
from app.config import load_config
from app.domain import CurrencySpec, MinerProfile, PoolSpec, ProblemInstance, validate_catalog
from app.main import EXIT_OK, main
from app.reward import DualSchemeContext, strategy1_reward, strategy2_reward
from app.solver import SolverConfig
from app.utility import Variant, build_objective, kernel_for, monte_carlo_utility
from tests.instances import bitcoin_pools, small_pools
from tests.oracles import GRID_STEPS, grid_optimum, simplex_grid

ROOT = Path(__file__).resolve().parents[2]
INSTANCES = ROOT / "config" / "instances"
MARKET = ROOT / "data" / "market" / "synthetic_30d.csv"
SOLVER = SolverConfig(rho_begin=0.25, rho_end=1e-10, max_evals=10_000)


@contextmanager
def within_seconds(limit: float) -> Iterator[None]:
    started = perf_counter()
    yield
    elapsed = perf_counter() - started
    assert elapsed < limit, f"took {elapsed:.1f}s, limit {limit:.0f}s"


class TestRiskNeutralSolo:
    def test_rho_zero_is_exactly_solo(self) -> None:
        report = optimize(small_pools(), Variant.SINGLE_PPLNS, 0.0, SOLVER)
        assert report.allocation.solo_alloc["coin"] == 40.0

    def test_tiny_rho_stays_on_zero_fee_options(self) -> None:
        """Solo and the fee-free pool are indistinguishable at first order."""
        with within_seconds(5.0):
            report = optimize(small_pools(), Variant.SINGLE_PPLNS, 1e-12, SOLVER)
        zero_fee = report.allocation.solo_alloc["coin"] + report.allocation.pool_alloc["pool4"]
        assert zero_fee >= 0.999 * 40.0
        solo_payoff = 40.0 * 50_000.0 / 1_111_040.0
        assert report.expected_payoff == pytest.approx(solo_payoff, rel=1e-6)

    def test_full_solo_matches_grid_optimum(self) -> None:
        kernel = kernel_for(build_objective(small_pools(rho=1e-12), Variant.SINGLE_PPLNS))
        with within_seconds(5.0):
            _, best = grid_optimum(kernel)
        solo = float(kernel.value(np.zeros(kernel.n)))
        assert solo >= best * (1.0 - 1e-7)


def _random_instance(rng: np.random.Generator, rho: float) -> ProblemInstance:
    n = int(rng.integers(2, 6))
    miner = 1e15
    pools = [
        PoolSpec(f"p{j}", "BTC", float(10.0 ** rng.uniform(13.0, 19.0)), float(rng.uniform(0.0, 0.04)))
        for j in range(n)
    ]
    network = sum(pool.hashrate for pool in pools) * 2.0 + miner
    currency = CurrencySpec(id="BTC", algorithm="sha256d", block_reward=45441.0, block_time=600.0, total_hashrate=network)
    return validate_catalog([currency], pools, MinerProfile({"sha256d": miner}, rho))


def test_oracle_lattice_step_is_two_percent() -> None:
    grid = simplex_grid(5)
    assert GRID_STEPS == 50
    assert grid.shape == (math.comb(GRID_STEPS + 5, 5), 5)
    assert np.unique(grid[:, 0]).tolist() == pytest.approx([k / 50 for k in range(51)])


def test_solver_never_loses_to_grid_oracle() -> None:
    rng = np.random.default_rng(20190201)
    with within_seconds(60.0):
        for case in range(20):
            rho = (1e-5, 5e-5, 1e-4)[case % 3]
            instance = _random_instance(rng, rho)
            kernel = kernel_for(build_objective(instance, Variant.SINGLE_PPLNS))
            _, oracle = grid_optimum(kernel)
            report = optimize(instance, Variant.SINGLE_PPLNS, None, SOLVER)
            assert report.utility >= oracle - 1e-9 * (1.0 + abs(oracle)), f"case {case}"


class TestMonteCarlo:
    def test_factors_agree_with_simulation(self) -> None:
        spec = build_objective(small_pools(), Variant.SINGLE_PPLNS)
        kernel = kernel_for(spec)
        with within_seconds(30.0):
            estimate = monte_carlo_utility(kernel.allocation(kernel.equal_split()), spec, 1_000_000, 42)
        assert estimate.within(3.0)
        assert len(estimate.factors) == 5
        assert all(0.0 < factor <= 1.0 for factor in estimate.factors)
        assert estimate.compare_value == pytest.approx(-math.prod(estimate.factors), rel=1e-12)

    def test_cli_check_exits_zero(self) -> None:
        with within_seconds(30.0):
            assert main(["mgf-check", "--config", str(INSTANCES / "small_pools.yaml")]) == EXIT_OK


class TestAllocationShapes:
    def test_low_risk_aversion_favours_fee_free_pool(self) -> None:
        pools = optimize(small_pools(), Variant.SINGLE_PPLNS, 1e-6, SOLVER).allocation.pool_alloc
        assert max(pools, key=pools.__getitem__) == "pool4"

    def test_high_risk_aversion_favours_large_pool(self) -> None:
        pools = optimize(small_pools(), Variant.SINGLE_PPLNS, 1e-4, SOLVER).allocation.pool_alloc
        assert pools["pool1"] > pools["pool2"] > 0.0

    @pytest.mark.parametrize("rho", [1e-5, 2e-5, 5e-5])
    def test_small_miner_uses_lowest_fee_pool(self, rho: float) -> None:
        report = optimize(bitcoin_pools(power=125e12), Variant.SINGLE_PPLNS, rho, SOLVER)
        assert report.allocation.pool_alloc["kano"] >= 0.99 * 125e12


class TestExchangeRates:
    def _scenario(self, name: str) -> SweepSeries:
        loaded = load_config(INSTANCES / name)
        return exchange_rate_scenario(
            loaded.instance(),
            loaded.model.run.variant,
            loaded.model.scenario.rates,
            default_rho_grid(),
            SOLVER,
        )

    def test_cheaper_bch_drops_bch_pool(self) -> None:
        series = self._scenario("btc_bch_q035.yaml")
        for report in series.reports:
            assert report.allocation.pool_alloc["viabtc_bch"] <= 1e-6 * 3000e12

    def test_dearer_bch_drops_bitcoin_pools(self) -> None:
        series = self._scenario("btc_bch_q033.yaml")
        for report in series.reports:
            assert report.allocation.pool_alloc["slush"] <= 1e-6 * 3000e12
            assert report.allocation.pool_alloc["kano"] <= 1e-6 * 3000e12


def test_strategy_one_equals_strategy_two() -> None:
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        pool = float(rng.uniform(1e15, 1e19))
        fraction = float(rng.uniform(0.01, 1.0))
        ctx = DualSchemeContext(
            block_reward=float(rng.uniform(1.0, 1e5)),
            pps_fraction=fraction,
            pool_hashrate=pool,
            miner_rate=float(rng.uniform(0.0, fraction * pool)),
        )
        assert strategy1_reward(ctx) == pytest.approx(strategy2_reward(ctx), rel=1e-12)


@pytest.mark.parametrize("factor", [1e-3, 1e3])
def test_scale_equivariance(factor: float) -> None:
    base = optimize(bitcoin_pools(), Variant.SINGLE_PPLNS, None, SOLVER)
    scaled = optimize(bitcoin_pools().scaled(factor), Variant.SINGLE_PPLNS, None, SOLVER)
    tolerance = 1e-6 * 3000e12 * factor
    for pool_id, value in base.allocation.pool_alloc.items():
        assert scaled.allocation.pool_alloc[pool_id] == pytest.approx(value * factor, rel=1e-6, abs=tolerance)


class TestBacktest:
    POWER = 1200e12

    def _config(self, **values: object) -> BacktestConfig:
        base: dict[str, object] = {
            "miner_power": self.POWER,
            "rho": 5e-5,
            "interval_days": 3,
            "pools": (BacktestPool("slush", 0.02),),
            "pps_fee": 0.04,
            "smoothing_window": 1,
        }
        base.update(values)
        return BacktestConfig(**base)  # type: ignore[arg-type]

    def test_passive_closed_form(self) -> None:
        series = load_market_data(MARKET)
        summary = run_passive(self._config(), series, "slush")

        rewards = []
        baseline = 0.0
        for row in series:
            rate = network_hashrate(row.difficulty)
            reward = row.coinbase_reward * row.exchange_rate
            estimate = rate * row.pool_blocks["slush"] / row.total_blocks
            rewards.append(self.POWER / (self.POWER + estimate) * 0.98 * row.pool_blocks["slush"] * reward)
            baseline += self.POWER / rate * row.total_blocks * reward * 0.96
        mean = sum(rewards) / len(rewards)
        sigma = math.sqrt(sum((r - mean) ** 2 for r in rewards) / len(rewards))

        assert summary.total_payoff == pytest.approx(sum(rewards), rel=1e-9)
        assert summary.pps_baseline == pytest.approx(baseline, rel=1e-9)
        assert summary.reward_stddev == pytest.approx(sigma, rel=1e-9)
        assert summary.sharpe == pytest.approx((sum(rewards) - baseline) / sigma, rel=1e-9)

    @pytest.mark.parametrize("interval", [3, 7])
    def test_active_changes_only_on_interval_boundaries(self, interval: int) -> None:
        series = load_market_data(MARKET)
        summary = run_active(self._config(interval_days=interval), series, SOLVER)
        assert summary.rebalances == math.ceil(len(series) / interval)
        for position in range(1, len(summary.daily)):
            if position % interval:
                assert dict(summary.daily[position].allocation) == dict(summary.daily[position - 1].allocation)
