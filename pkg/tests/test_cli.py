import json

import pandas as pd
import pytest

from src.main import main
from tests.conftest import CONFIG_DIR, write_text


# ─── simulate ────────────────────────────────────────────────────────

def test_simulate_quick_config(tmp_path, capsys):
    code = main(["simulate", "--config", str(CONFIG_DIR / "quick.cfg"), "--out", str(tmp_path), "--jobs", "1"])
    assert code == 0
    stamps = sorted(p.name for p in tmp_path.glob("*.stamp"))
    assert len(stamps) == 8
    assert stamps[0] == "run01H.stamp"
    assert (tmp_path / "manifest.txt").is_file()
    assert "runs: 4" in capsys.readouterr().out


def test_seed_override_changes_output(tmp_path):
    cfg = str(CONFIG_DIR / "quick.cfg")
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--jobs", "1", "--seed", "1"])
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--jobs", "1", "--seed", "2"])
    a = (tmp_path / "a" / "run01O.stamp").read_text()
    b = (tmp_path / "b" / "run01O.stamp").read_text()
    assert a != b


# ─── Error exits ─────────────────────────────────────────────────────

def test_bad_config_exits_2(tmp_path, capsys):
    cfg = write_text(tmp_path / "bad.cfg", "n_runs=2\nreflectivity=1.5\n")
    code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 2
    err = capsys.readouterr().err
    assert "bad.cfg:2" in err and "reflectivity" in err


def test_unknown_key_exits_2(tmp_path):
    cfg = write_text(tmp_path / "typo.cfg", "n_run=2\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2


def test_negative_bin_width_exits_2(simulated_dir, tmp_path, capsys):
    code = main(["correlate", str(simulated_dir), "--out", str(tmp_path), "--bin-width", "-1"])
    assert code == 2
    assert "--bin-width" in capsys.readouterr().err


def test_bad_window_exits_2(simulated_dir, tmp_path):
    assert main(["correlate", str(simulated_dir), "--out", str(tmp_path), "--window", "middle:3", "--jobs", "1"]) == 2


def test_empty_directory_exits_4(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["analyze", str(empty), "--out", str(tmp_path / "out")]) == 4


def test_broken_stamp_file_exits_4(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    write_text(data / "run01O.stamp", "+5\n+3\n")
    write_text(data / "run01H.stamp", "+4\n")
    assert main(["fit", str(data), "--out", str(tmp_path / "out"), "--jobs", "1"]) == 4


def test_one_empty_beam_exits_4(tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    # 33 one-event O blocks separated by moving stamps, nothing in H
    ticks = [t if t % 2 else -t for t in range(1, 66)]
    write_text(data / "run01O.stamp", "".join(f"{t:+d}\n" for t in ticks))
    write_text(data / "run01H.stamp", "")
    assert main(["analyze", str(data), "--out", str(tmp_path / "out"), "--jobs", "1"]) == 4
    assert "error:" in capsys.readouterr().err


# ─── fit / analyze / correlate ───────────────────────────────────────

def test_fit_writes_count_tables(simulated_dir, tmp_path, capsys):
    code = main(["fit", str(simulated_dir), "--out", str(tmp_path), "--jobs", "1"])
    assert code == 0
    for name in ("counts_per_segment.csv", "counts_vs_setting.csv", "std_vs_setting.csv", "fit_parameters.csv"):
        assert (tmp_path / name).is_file()
    counts = pd.read_csv(tmp_path / "counts_per_segment.csv")
    assert len(counts) == 3 * 33
    assert "A_O=" in capsys.readouterr().out


def test_analyze_writes_full_suite(simulated_dir, tmp_path):
    code = main(["analyze", str(simulated_dir), "--out", str(tmp_path), "--jobs", "1", "--bin-width", "0.02"])
    assert code == 0
    amplitudes = pd.read_csv(tmp_path / "amplitude_vs_setting.csv")
    assert sorted(amplitudes["source"].unique()) == ["H", "O", "OH", "x"]
    assert len(amplitudes) == 4 * 33
    curve = pd.read_csv(tmp_path / "correlation_OH_X05.csv")
    assert list(curve.columns) == ["dt", "value", "sample_count", "valid"]
    assert curve["value"].abs().max() <= 1.0
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["runs"] == 3 and meta["settings"] == 33
    merged = pd.read_csv(tmp_path / "merged_run01.csv")
    assert list(merged.columns) == ["tick", "seconds", "label", "moving_flag", "setting"]
    assert set(merged.loc[merged["moving_flag"] == 0, "setting"]) == set(range(1, 34))
    assert len(list(tmp_path.glob("merged_run*.csv"))) == 3
    params = pd.read_csv(tmp_path / "fit_parameters.csv").set_index("parameter")["value"]
    assert 0.0 <= params["collision_fraction"] < 0.05


def test_correlate_single_source(simulated_dir, tmp_path, capsys):
    code = main(["correlate", str(simulated_dir), "--out", str(tmp_path), "--filter", "OH",
                 "--window", "last:0.5", "--jobs", "1"])
    assert code == 0
    assert not list(tmp_path.glob("correlation_O_*.csv"))
    assert len(list(tmp_path.glob("correlation_OH_*.csv"))) == 33
    assert "C_OH" in capsys.readouterr().out


# ─── roundtrip ───────────────────────────────────────────────────────

@pytest.mark.slow
@pytest.mark.parametrize("name, null", [("reference.cfg", False), ("fitted.cfg", False), ("null.cfg", True)])
def test_collapse_roundtrip(name, null, tmp_path):
    code = main(["roundtrip", "--config", str(CONFIG_DIR / name), "--out", str(tmp_path)])
    report = json.loads((tmp_path / "acceptance.json").read_text())
    assert code == 0, report
    statuses = {c["name"]: c["status"] for c in report["criteria"]}
    assert (statuses["period_recovery"] == "null confirmed") is null


@pytest.mark.slow
def test_des_roundtrip(tmp_path):
    code = main(["roundtrip", "--config", str(CONFIG_DIR / "reference_des.cfg"), "--out", str(tmp_path)])
    report = json.loads((tmp_path / "acceptance.json").read_text())
    assert code == 0, report
    assert (tmp_path / "companion" / "analysis" / "fit_parameters.csv").is_file()
