"""Shared fixtures: small protocol configs, seeded generators and a simulated data directory."""

from pathlib import Path

import numpy as np
import pytest

from src.domain.models import FringeParams, OscillationParams, ProtocolConfig
from src.services.simulator_service import run_protocol

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fringe():
    return FringeParams()


@pytest.fixture
def small_config():
    """Three short runs over all 33 settings."""
    return ProtocolConfig(
        n_runs=3,
        n_settings=33,
        dwell=1.0,
        move_duration=0.2,
        arrival_rate=300.0,
        seed=11,
        epsilon_mode="segment",
        fp=FringeParams(),
        op=OscillationParams(),
    )


@pytest.fixture(scope="session")
def simulated_dir(tmp_path_factory):
    cfg = ProtocolConfig(
        n_runs=3,
        n_settings=33,
        dwell=1.0,
        move_duration=0.2,
        arrival_rate=300.0,
        seed=11,
        epsilon_mode="segment",
    )
    out = tmp_path_factory.mktemp("simulated")
    run_protocol(cfg, out, jobs=1)
    return out


def write_text(path: Path, text: str) -> Path:
    path.write_text(text, encoding="ascii")
    return path
