import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src.domain.models import (
    DispersionTest,
    FringeParams,
    MomentRatios,
    OscillationParams,
    ProtocolConfig,
)
from src.services.acceptance_service import (
    check_amplitude_pattern,
    check_asymmetry,
    check_fringe,
    check_model_equivalence,
    check_oracles,
    check_period,
    check_poissonianity,
    check_variance,
    criteria_by_name,
    stationary_frequencies,
    write_report,
)
from src.services.analysis_service import AnalysisResult
from src.services.quantum_service import predicted_oscillation_amplitude

N_SETTINGS = 33


def _amplitudes(cfg, truth, period=2.8, detected=True, oh_amplitude=0.0):
    x = np.arange(1, N_SETTINGS + 1)
    rows = []
    for source in ("O", "H", "OH", "x"):
        amp = predicted_oscillation_amplitude(truth, cfg.op, x, source)
        hit = detected and source != "OH"
        for setting, a in zip(x, amp):
            rows.append({
                "setting": int(setting), "source": source,
                "amplitude": float(a) if hit else oh_amplitude, "damping": 0.1,
                "oscillation_amplitude": abs(float(a)) if hit else oh_amplitude,
                "period": period if hit else np.nan, "detected": hit or oh_amplitude > 0,
                "false_alarm": 1e-6 if hit else 0.5, "noise_floor": 0.05,
                "series_length": 6400.0, "abs_sin_phase": 0.0,
            })
    return pd.DataFrame(rows)


def _analysis(amplitudes=None, fringe=None, **kwargs):
    counts = pd.DataFrame({"run": [1], "setting": [1], "count_o": [10], "count_h": [20]})
    return AnalysisResult(Path("."), n_runs=kwargs.pop("n_runs", 37), n_settings=N_SETTINGS, counts=counts,
                          fringe=fringe, amplitudes=amplitudes, **kwargs)


# ─── Fringe ──────────────────────────────────────────────────────────

def test_fringe_within_tolerance(fringe):
    assert check_fringe(fringe, _analysis(fringe=fringe)).passed
    nudged = fringe.model_copy(update={"chi_o": fringe.chi_o + 0.02, "b_o": fringe.b_o * 1.01})
    assert check_fringe(fringe, _analysis(fringe=nudged)).status == "pass"


def test_fringe_amplitude_off(fringe):
    off = fringe.model_copy(update={"a_o": fringe.a_o * 1.05})
    result = check_fringe(fringe, _analysis(fringe=off))
    assert not result.passed
    assert result.detail["relative"]["a_o"] == pytest.approx(0.05)


# ─── Variance ────────────────────────────────────────────────────────

def test_variance_skips():
    analysis = _analysis()
    no_noise = ProtocolConfig(fp=FringeParams(eps0=0.0), epsilon_mode="segment")
    assert check_variance(no_noise, analysis).status == "skipped"
    assert check_variance(ProtocolConfig(epsilon_mode="event"), analysis).status == "skipped"
    assert check_variance(ProtocolConfig(epsilon_mode="segment"), analysis).status == "skipped"


# ─── Oscillations ────────────────────────────────────────────────────

def test_period_recovered(fringe):
    cfg = ProtocolConfig()
    assert check_period(cfg, _analysis(_amplitudes(cfg, fringe, period=2.85))).passed
    assert not check_period(cfg, _analysis(_amplitudes(cfg, fringe, period=3.0))).passed
    assert not check_period(cfg, _analysis(_amplitudes(cfg, fringe, detected=False))).passed


def test_null_oscillation_confirmed(fringe):
    cfg = ProtocolConfig(op=OscillationParams(y=0.0))
    quiet = _analysis(_amplitudes(cfg, fringe, detected=False))
    for check in (check_period(cfg, quiet), check_asymmetry(cfg, quiet, fringe), check_amplitude_pattern(cfg, quiet, fringe)):
        assert check.passed and check.status == "null confirmed"

    noisy = _analysis(_amplitudes(ProtocolConfig(), fringe))
    assert check_period(cfg, noisy).status == "fail"


def test_asymmetry_of_predicted_pattern(fringe):
    cfg = ProtocolConfig()
    result = check_asymmetry(cfg, _analysis(_amplitudes(cfg, fringe)), fringe)
    assert result.passed
    assert result.detail["sum_o"] > result.detail["sum_h"]
    assert result.detail["ordered_fraction"] == 1.0


def test_asymmetry_fails_on_oh_oscillation(fringe):
    cfg = ProtocolConfig()
    result = check_asymmetry(cfg, _analysis(_amplitudes(cfg, fringe, oh_amplitude=0.2)), fringe)
    assert not result.passed
    assert not result.detail["oh_below_noise_floor"]


def test_amplitude_pattern_rank_correlation(fringe):
    cfg = ProtocolConfig()
    result = check_amplitude_pattern(cfg, _analysis(_amplitudes(cfg, fringe)), fringe)
    assert result.passed
    assert result.detail["spearman_predicted"] == pytest.approx(1.0)


# ─── Poissonianity ───────────────────────────────────────────────────

def test_poissonianity():
    good = _analysis(moments=MomentRatios(1.3e-3, 1.301e-3, 1.302e-3, 100_000),
                     dispersion=DispersionTest(1.01, 40.0, 36, 0.3))
    assert check_poissonianity(good).passed
    bunched = _analysis(moments=MomentRatios(1.3e-3, 1.4e-3, 1.5e-3, 100_000),
                        dispersion=DispersionTest(1.01, 40.0, 36, 0.3))
    assert not check_poissonianity(bunched).passed
    overdispersed = _analysis(moments=MomentRatios(1.3e-3, 1.301e-3, 1.302e-3, 100_000),
                              dispersion=DispersionTest(3.0, 108.0, 36, 1e-9))
    assert not check_poissonianity(overdispersed).passed


# ─── Model equivalence ───────────────────────────────────────────────

def test_stationary_frequencies():
    counts = pd.DataFrame({"run": [1, 2], "setting": [1, 1], "count_o": [30, 50], "count_h": [70, 50]})
    freq = stationary_frequencies(counts)
    assert freq["frequency"].tolist() == pytest.approx([0.4])
    assert freq["se"].tolist() == pytest.approx([0.1])


def test_equivalence_skipped_for_collapse(fringe):
    assert check_model_equivalence(ProtocolConfig(), _analysis(), None, fringe).status == "skipped"


# ─── Oracles and report ──────────────────────────────────────────────

def test_oracles_pass(fringe):
    result = check_oracles(fringe)
    assert result.passed, result.detail
    assert result.detail["reflectivity"] == pytest.approx([0.76, 0.24], abs=0.01)


def test_report_json(fringe, tmp_path):
    results = [check_oracles(fringe), check_fringe(fringe, _analysis(fringe=fringe.model_copy(update={"a_h": 1.0})))]
    write_report(results, tmp_path / "acceptance.json")
    report = json.loads((tmp_path / "acceptance.json").read_text())
    assert report["passed"] is False
    assert [c["name"] for c in report["criteria"]] == ["analytic_oracles", "fringe_fit"]
    assert set(criteria_by_name(results)) == {"analytic_oracles", "fringe_fit"}
