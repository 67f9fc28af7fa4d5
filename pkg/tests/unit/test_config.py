from __future__ import annotations

from pathlib import Path

import pytest

from app.config import (
    ConfigError,
    apply_overrides,
    load_config,
    load_pool_catalog,
    load_raw,
    parse_override,
)
from app.domain import UnknownCurrency
from app.solver import SolverConfig, StartKind
from app.utility import Variant

ROOT = Path(__file__).resolve().parents[2]
INSTANCES = ROOT / "config" / "instances"

MINIMAL = """
currencies:
  - {id: BTC, algorithm: sha256d, coin_reward: 12.5, exchange_rate: 4000, block_time: 600, total_hashrate: 4.0e+19}
pools:
  - {id: slush, currency: BTC, hashrate: 4.0e+18, fee: 0.02}
  - {id: kano, currency: BTC, hashrate: 5.0e+16, fee: 0.009}
miner:
  power: 1.0e+15
  rho: 1.0e-5
"""


def _write(tmp_path: Path, text: str, name: str = "problem.yaml") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoad:
    def test_shipped_instance(self) -> None:
        loaded = load_config(INSTANCES / "small_pools.yaml")
        instance = loaded.instance()
        assert loaded.model.run.variant is Variant.SINGLE_PPLNS
        assert instance.miner.rho == 1e-4
        assert instance.pool("pool1").hashrate == 1e6
        assert [pool.id for pool in instance.pools] == ["pool1", "pool2", "pool3", "pool4"]

    def test_coin_reward_uses_exchange_rate(self, tmp_path: Path) -> None:
        instance = load_config(_write(tmp_path, MINIMAL)).instance()
        assert instance.currency("BTC").block_reward == pytest.approx(50_000.0)

    def test_scalar_power_maps_to_only_algorithm(self, tmp_path: Path) -> None:
        instance = load_config(_write(tmp_path, MINIMAL)).instance()
        assert dict(instance.miner.power_by_algorithm) == {"sha256d": 1e15}

    def test_json_and_toml(self, tmp_path: Path) -> None:
        json_path = _write(
            tmp_path,
            '{"currencies": [{"id": "c", "algorithm": "a", "block_reward": 10, "block_time": 60, "total_hashrate": 100}],'
            ' "pools": [{"id": "p", "currency": "c", "hashrate": 50, "fee": 0.01}], "miner": {"power": 5, "rho": 0.001}}',
            "problem.json",
        )
        toml_path = _write(
            tmp_path,
            '[[currencies]]\nid = "c"\nalgorithm = "a"\nblock_reward = 10\nblock_time = 60\ntotal_hashrate = 100\n'
            '[[pools]]\nid = "p"\ncurrency = "c"\nhashrate = 50\nfee = 0.01\n'
            "[miner]\npower = 5\nrho = 0.001\n",
            "problem.toml",
        )
        assert load_config(json_path).instance() == load_config(toml_path).instance()

    def test_preferences_give_rho(self, tmp_path: Path) -> None:
        text = MINIMAL.replace("  rho: 1.0e-5\n", "  crra: 2.0\n  wealth: 100000\n")
        assert load_config(_write(tmp_path, text)).instance().miner.rho == pytest.approx(2e-5)

    def test_run_rho_wins(self, tmp_path: Path) -> None:
        loaded = load_config(_write(tmp_path, MINIMAL + "run:\n  rho: 3.0e-5\n"))
        assert loaded.instance().miner.rho == 3e-5

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")

    def test_unsupported_suffix(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError):
            load_config(_write(tmp_path, "a: 1", "problem.ini"))

    def test_empty_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError):
            load_config(_write(tmp_path, ""))

    def test_raw_copy_is_independent(self, tmp_path: Path) -> None:
        path = _write(tmp_path, MINIMAL)
        first = load_raw(path)
        first["pools"].clear()
        assert len(load_raw(path)["pools"]) == 2

    def test_solver_section(self, tmp_path: Path) -> None:
        text = MINIMAL + "run:\n  solver:\n    rho_end: 1.0e-6\n    start: equal_split\n"
        config = load_config(_write(tmp_path, text)).solver_config(SolverConfig())
        assert config.rho_end == 1e-6
        assert config.start is StartKind.EQUAL_SPLIT
        assert config.rho_begin == SolverConfig().rho_begin


class TestValidationErrors:
    def test_error_names_record_by_id(self, tmp_path: Path) -> None:
        text = MINIMAL.replace("fee: 0.009", "fee: lots")
        with pytest.raises(ConfigError) as exc:
            load_config(_write(tmp_path, text))
        assert exc.value.field_path == "pools.kano.fee"

    def test_unknown_key_rejected(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError) as exc:
            load_config(_write(tmp_path, MINIMAL + "extra: 1\n"))
        assert exc.value.field_path == "extra"

    def test_both_rewards_rejected(self, tmp_path: Path) -> None:
        text = MINIMAL.replace("coin_reward: 12.5,", "coin_reward: 12.5, block_reward: 50000,")
        with pytest.raises(ConfigError):
            load_config(_write(tmp_path, text))

    def test_unknown_currency_surfaces_from_catalog(self, tmp_path: Path) -> None:
        text = MINIMAL.replace("currency: BTC, hashrate: 5.0e+16", "currency: LTC, hashrate: 5.0e+16")
        with pytest.raises(UnknownCurrency):
            load_config(_write(tmp_path, text)).instance()


class TestOverrides:
    def test_parse_scientific_notation(self) -> None:
        assert parse_override("rho=1e-4") == ("rho", 1e-4)
        assert parse_override("miner.power=125e12") == ("miner.power", 125e12)

    def test_parse_structured_value(self) -> None:
        assert parse_override("run.rho_grid=[1.0e-5, 2.0e-5]") == ("run.rho_grid", [1e-5, 2e-5])

    def test_parse_requires_equals(self) -> None:
        with pytest.raises(ConfigError):
            parse_override("rho")

    def test_shorthand_rho(self, tmp_path: Path) -> None:
        loaded = load_config(_write(tmp_path, MINIMAL), ["rho=2e-5"])
        assert loaded.model.run.rho == 2e-5
        assert loaded.instance().miner.rho == 2e-5

    def test_pool_addressed_by_id(self, tmp_path: Path) -> None:
        loaded = load_config(_write(tmp_path, MINIMAL), ["pools.kano.fee=0.02"])
        assert loaded.instance().pool("kano").fee == 0.02

    def test_unknown_record(self) -> None:
        with pytest.raises(ConfigError) as exc:
            apply_overrides({"pools": [{"id": "a"}]}, ["pools.b.fee=0.1"])
        assert exc.value.field_path == "pools.b"

    def test_power_override_keeps_single_algorithm_mapping(self) -> None:
        data = apply_overrides({"miner": {"power": {"sha256d": 1.0}}}, ["miner.power=125e12"])
        assert data["miner"]["power"] == {"sha256d": 125e12}

    def test_overrides_do_not_touch_cache(self, tmp_path: Path) -> None:
        path = _write(tmp_path, MINIMAL)
        load_config(path, ["pools.kano.fee=0.03"])
        assert load_config(path).instance().pool("kano").fee == 0.009


def test_pool_catalog() -> None:
    catalog = load_pool_catalog(ROOT / "config" / "pool_catalog.yaml")
    btc = catalog.for_coin("BTC")
    assert btc
    assert all(entry.coin == "BTC" for entry in btc)
    antpool = next(entry for entry in btc if entry.name == "Antpool")
    assert antpool.pays_per_share
