import math

import pandas as pd
import pytest

from src.domain.models import ProtocolConfig
from src.exceptions import ConfigError, DataFormatError
from src.storage.repository import (
    discover_stamp_pairs,
    read_config,
    read_manifest,
    write_config,
    write_manifest,
    write_table,
)
from tests.conftest import CONFIG_DIR, write_text


# ─── Configs ─────────────────────────────────────────────────────────

@pytest.mark.parametrize("name", ["reference.cfg", "reference_des.cfg", "null.cfg", "quick.cfg"])
def test_shipped_configs_parse(name):
    cfg = read_config(CONFIG_DIR / name)
    assert cfg.n_settings == 33


def test_reference_config_values():
    cfg = read_config(CONFIG_DIR / "reference.cfg")
    assert cfg.model == "collapse"
    assert cfg.epsilon_mode == "segment"
    assert cfg.fp.chi_h - cfg.fp.chi_o == pytest.approx(math.pi)
    assert cfg.op.period == pytest.approx(2.8)
    assert read_config(CONFIG_DIR / "reference_des.cfg").bs.reflectivity == 0.24
    assert read_config(CONFIG_DIR / "null.cfg").op.y == 0.0


def test_fitted_config_values():
    cfg = read_config(CONFIG_DIR / "fitted.cfg")
    fp = cfg.fp
    assert (fp.a_o, fp.a_h, fp.b_o, fp.b_h) == (2780, 4950, 0.74, 0.42)
    assert (fp.omega_o, fp.chi_o) == (0.60, -2.71)
    assert abs(fp.chi_h - fp.chi_o - math.pi) < 0.05
    assert cfg.arrival_rate * cfg.dwell == pytest.approx(fp.a_o + fp.a_h)


def test_unknown_key_names_line(tmp_path):
    path = write_text(tmp_path / "bad.cfg", "n_runs=3\nfoo=1\n")
    with pytest.raises(ConfigError) as err:
        read_config(path)
    assert err.value.line == 2
    assert "foo" in str(err.value)


def test_invariant_violation_names_key_and_line(tmp_path):
    path = write_text(tmp_path / "bad.cfg", "# comment\nn_runs=3\nb_o=1.5\n")
    with pytest.raises(ConfigError) as err:
        read_config(path)
    assert err.value.line == 3
    assert "b_o" in str(err.value)


def test_bad_number(tmp_path):
    with pytest.raises(ConfigError) as err:
        read_config(write_text(tmp_path / "bad.cfg", "dwell=ten\n"))
    assert err.value.line == 1
    assert err.value.exit_code == 2


def test_duplicate_key(tmp_path):
    with pytest.raises(ConfigError, match="duplicate"):
        read_config(write_text(tmp_path / "bad.cfg", "seed=1\nseed=2\n"))


def test_model_name_case_insensitive(tmp_path):
    assert read_config(write_text(tmp_path / "a.cfg", "model=DES\n")).model == "des"


def test_config_write_read(tmp_path):
    cfg = ProtocolConfig(n_runs=5, seed=9, model="des", randomize_t0=True, phase_drift_per_run=0.01)
    write_config(cfg, tmp_path / "c.cfg")
    assert read_config(tmp_path / "c.cfg") == cfg


def test_manifest_truth_entries(tmp_path):
    cfg = ProtocolConfig(n_runs=1)
    write_manifest(tmp_path / "manifest.txt", cfg, [("run.1.segment.1.count_o", 12), ("run.1.start_seconds", 0.0)])
    back, truth = read_manifest(tmp_path / "manifest.txt")
    assert back == cfg
    assert truth["run.1.segment.1.count_o"] == "12"


# ─── Stamp pairs ─────────────────────────────────────────────────────

def test_discover_pairs_sorted(tmp_path):
    for name in ("run02O", "run02H", "run01O", "run01H"):
        write_text(tmp_path / f"{name}.stamp", "+1\n")
    pairs = discover_stamp_pairs(tmp_path)
    assert [p[0] for p in pairs] == ["run01", "run02"]
    assert pairs[0][1].name == "run01O.stamp"


def test_missing_partner(tmp_path):
    write_text(tmp_path / "run01O.stamp", "+1\n")
    with pytest.raises(DataFormatError, match="no H stamp file"):
        discover_stamp_pairs(tmp_path)


def test_empty_directory(tmp_path):
    with pytest.raises(DataFormatError) as err:
        discover_stamp_pairs(tmp_path)
    assert err.value.exit_code == 4


# ─── Tables ──────────────────────────────────────────────────────────

def test_table_format(tmp_path):
    write_table(pd.DataFrame({"dt": [0.005, 0.015], "value": [1 / 3, -0.25]}), tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == "dt,value\n0.005,0.3333333333\n0.015,-0.25\n"
    assert [p.name for p in tmp_path.iterdir()] == ["t.csv"]
