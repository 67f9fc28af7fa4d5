"""Application settings loaded from environment variables."""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Environment-driven configuration with sensible defaults."""

    # Core settings
    log_level: str = Field(default="info", alias="LOG_LEVEL")
    log_format: str = Field(default="json", alias="LOG_FORMAT")
    metrics_enabled: bool = Field(default=True, alias="METRICS_ENABLED")
    metrics_file: Path | None = Field(default=None, alias="METRICS_FILE")

    # Solver defaults (normalized variable units)
    solver_rho_begin: float = Field(default=0.25, alias="SOLVER_RHO_BEGIN")
    solver_rho_end: float = Field(default=1e-10, alias="SOLVER_RHO_END")
    solver_max_evals: int = Field(default=10_000, alias="SOLVER_MAX_EVALS")
    solver_start: str = Field(default="vertex_sweep", alias="SOLVER_START")

    # Risk-aversion sweeps
    sweep_rho_min: float = Field(default=1e-6, alias="SWEEP_RHO_MIN")
    sweep_rho_max: float = Field(default=1e-4, alias="SWEEP_RHO_MAX")
    sweep_points: int = Field(default=40, alias="SWEEP_POINTS")
    sweep_jobs: int = Field(default=1, alias="SWEEP_JOBS")

    # Components below this fraction of the miner's power are reported as zero
    dust_fraction: float = Field(default=1e-9, alias="DUST_FRACTION")

    # Monte-Carlo check
    mc_draws: int = Field(default=1_000_000, alias="MC_DRAWS")
    mc_seed: int = Field(default=42, alias="MC_SEED")

    # Backtest
    backtest_pps_fee: float = Field(default=0.04, alias="BACKTEST_PPS_FEE")
    backtest_smoothing_window: int = Field(default=14, alias="BACKTEST_SMOOTHING_WINDOW")

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Return a cached Settings instance."""
    return Settings()
