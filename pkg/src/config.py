"""Application configuration via Pydantic Settings."""

import math
from functools import lru_cache

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Runtime settings loaded from environment variables (prefix NTS_) or .env."""

    # Execution
    jobs: int = 0  # 0 = all cores
    output_dir: str = "out"
    log_level: str = "INFO"

    # Correlation analysis
    bin_width: float = 0.01  # seconds

    # Output
    export_merged: bool = True  # merged_<run>.csv per run from analyze

    # Fitting
    detection_fap: float = 1e-3
    fit_window: float = 0.8  # fraction of the dwell used by damped-cosine fits
    max_fit_iterations: int = 200
    fit_tolerance: float = 1e-10

    model_config = {
        "env_prefix": "NTS_",
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "extra": "ignore",
    }


# ─── Clock ───────────────────────────────────────────────────────────

TICK_SECONDS = 25e-6

# ─── Reference parameter sets ────────────────────────────────────────

# Parameters the collapse-model and DES simulations were run with
SIMULATION_FRINGE = {
    "a_o": 2745.0,
    "a_h": 4916.0,
    "b_o": 0.73,
    "b_h": 0.42,
    "omega_o": 0.60,
    "omega_h": 0.60,
    "chi_o": -2.7,
    "chi_h": -2.7 + math.pi,
    "eps0": 0.13,
}

SIMULATION_OSCILLATION = {
    "y": 0.2,
    "omega": 2 * math.pi / 2.8,
    "t0": 0.0,
}

SIMULATION_DES = {
    "reflectivity": 0.24,
    "gamma": 0.6,
}

# Acceptance tolerances used by the roundtrip harness
ACCEPTANCE_TOLERANCES = {
    "count_rel": 0.02,
    "omega_abs": 0.02,
    "chi_abs": 0.05,
    "std_excess_rms": 0.10,
    "baseline_sigma": 5.0,
    "period_abs": 0.1,
    "null_fraction": 0.95,
    "spearman": 0.8,
    "asymmetry_fraction": 0.8,
    "moment_rel": 0.01,
    "dispersion_p": 0.01,
    "model_amplitude_rel": 0.15,
    "frequency_sigma": 3.0,
    "reflectivity_abs": 0.01,
    "oracle_abs": 1e-10,
}


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
