"""Roundtrip acceptance: simulate, analyze and score a synthetic experiment against its ground truth."""

from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import integrate, stats

from src.config import ACCEPTANCE_TOLERANCES
from src.domain.models import (
    CriterionResult,
    FluctuationModel,
    FringeParams,
    ProtocolConfig,
)
from src.exceptions import AcceptanceError, ToolkitError
from src.services.analysis_service import AnalysisResult, analyze_dataset
from src.services.correlation_service import lag_correlations, lagged_stats
from src.services.fitting_service import wrap_phase
from src.services.quantum_service import (
    fringe_phase,
    predicted_oscillation_amplitude,
    probability_from_phase,
    reflectivity_from_ratio,
)
from src.services.simulator_service import des_equivalent_fringe, expected_fringe, run_protocol
from src.services.statistics_service import compound_variance, uniform_phase_averages
from src.storage.repository import write_sidecar
from src.utils.logger import logger

PathLike = Union[str, Path]
TOL = ACCEPTANCE_TOLERANCES


def _result(name: str, passed: bool, detail: dict, status: Optional[str] = None) -> CriterionResult:
    return CriterionResult(name, bool(passed), status or ("pass" if passed else "fail"), detail)


def _skipped(name: str, reason: str) -> CriterionResult:
    return CriterionResult(name, True, "skipped", {"reason": reason})


def _null_fraction(analysis: AnalysisResult, sources: Sequence[str]) -> float:
    table = analysis.amplitudes
    rows = table[table["source"].isin(sources)]
    return float((~rows["detected"]).mean()) if len(rows) else 1.0


def _null_check(name: str, analysis: AnalysisResult, sources: Sequence[str]) -> CriterionResult:
    fraction = _null_fraction(analysis, sources)
    passed = fraction >= TOL["null_fraction"]
    return _result(name, passed, {"null_fraction": fraction, "sources": list(sources)},
                   "null confirmed" if passed else "fail")


# ─── 1. Fringe fit ───────────────────────────────────────────────────

def check_fringe(truth: FringeParams, analysis: AnalysisResult) -> CriterionResult:
    fit = analysis.fringe
    rel = {k: abs(getattr(fit, k) / getattr(truth, k) - 1) for k in ("a_o", "a_h", "b_o", "b_h")}
    omega = {k: abs(getattr(fit, k) - getattr(truth, k)) for k in ("omega_o", "omega_h")}
    chi = {k: abs(float(wrap_phase(getattr(fit, k) - getattr(truth, k)))) for k in ("chi_o", "chi_h")}
    delta = abs(float(wrap_phase(fit.chi_h - fit.chi_o - np.pi)))
    passed = (
        max(rel.values()) < TOL["count_rel"]
        and max(omega.values()) < TOL["omega_abs"]
        and max(chi.values()) < TOL["chi_abs"]
        and delta < TOL["chi_abs"]
    )
    detail = {"relative": rel, "omega_error": omega, "chi_error": chi, "delta_chi_minus_pi": delta,
              "fitted": fit.model_dump(), "expected": truth.model_dump()}
    return _result("fringe_fit", passed, detail)


# ─── 2. Variance structure ───────────────────────────────────────────

def check_variance(cfg: ProtocolConfig, analysis: AnalysisResult) -> CriterionResult:
    name = "variance_structure"
    if cfg.fp.eps0 == 0:
        return _skipped(name, "eps0 = 0")
    if cfg.epsilon_mode != "segment":
        return _skipped(name, "per-event eps does not change the run-to-run count variance")
    if analysis.std_table is None:
        return _skipped(name, "fewer than two runs")

    t = analysis.std_table
    observed = np.concatenate([t["std_o"], t["std_h"]])
    model = np.concatenate([t["model_o"], t["model_h"]])
    baseline = np.concatenate([t["baseline_o"], t["baseline_h"]])
    sampling = 1 / np.sqrt(2 * (analysis.n_runs - 1))

    d = observed / model - 1
    excess = float(np.sqrt(max(0.0, np.mean(d ** 2) - sampling ** 2)))
    separation = float(np.mean(observed / baseline - 1) / (sampling / np.sqrt(observed.size)))

    sin_phase = t["abs_sin_phase"].to_numpy()
    low, high = t["std_o"][sin_phase < 0.3], t["std_o"][sin_phase > 0.9]
    minima = bool(low.mean() < high.mean()) if len(low) and len(high) else True

    passed = excess < TOL["std_excess_rms"] and separation > TOL["baseline_sigma"] and minima
    detail = {"excess_relative_rms": excess, "baseline_separation_sigma": separation,
              "minima_at_extrema": minima, "eps0_fit": analysis.variance.eps0, "eps0_true": cfg.fp.eps0}
    return _result(name, passed, detail)


# ─── 3-5. Oscillations ───────────────────────────────────────────────

def check_period(cfg: ProtocolConfig, analysis: AnalysisResult) -> CriterionResult:
    name = "period_recovery"
    if cfg.op.y == 0:
        return _null_check(name, analysis, ("O", "x"))
    periods = {s: analysis.median_period(s) for s in ("O", "x")}
    errors = {s: (abs(p - cfg.op.period) if p is not None else None) for s, p in periods.items()}
    passed = all(e is not None and e <= TOL["period_abs"] for e in errors.values())
    return _result(name, passed, {"period_true": cfg.op.period, "period_fit": periods, "error": errors})


def check_asymmetry(cfg: ProtocolConfig, analysis: AnalysisResult, truth: FringeParams) -> CriterionResult:
    name = "channel_asymmetry"
    if cfg.op.y == 0:
        return _null_check(name, analysis, ("O", "H", "OH"))
    x = np.arange(1, analysis.n_settings + 1)
    amp_o = np.abs(analysis.amplitude_column("O"))
    amp_h = np.abs(analysis.amplitude_column("H"))
    amp_oh = np.abs(analysis.amplitude_column("OH"))

    pred_o = predicted_oscillation_amplitude(truth, cfg.op, x, "O")
    pred_h = predicted_oscillation_amplitude(truth, cfg.op, x, "H")
    strong = pred_o > 2 * pred_h
    ordered = float(np.mean(amp_o[strong] >= amp_h[strong])) if strong.any() else 1.0

    oh = analysis.amplitudes[analysis.amplitudes["source"] == "OH"].sort_values("setting")
    floor = oh["noise_floor"].to_numpy()
    below = bool(np.all(amp_oh < floor))

    passed = amp_o.sum() > amp_h.sum() and ordered >= TOL["asymmetry_fraction"] and below
    detail = {"sum_o": float(amp_o.sum()), "sum_h": float(amp_h.sum()), "ordered_fraction": ordered,
              "oh_below_noise_floor": below, "max_oh_amplitude": float(amp_oh.max())}
    return _result(name, passed, detail)


def check_amplitude_pattern(cfg: ProtocolConfig, analysis: AnalysisResult, truth: FringeParams) -> CriterionResult:
    name = "amplitude_pattern"
    if cfg.op.y == 0:
        return _null_check(name, analysis, ("O",))
    x = np.arange(1, analysis.n_settings + 1)
    amp_o = analysis.amplitude_column("O")
    predicted = predicted_oscillation_amplitude(truth, cfg.op, x, "O")
    rho = float(stats.spearmanr(amp_o, predicted)[0])
    rho_sin = float(stats.spearmanr(amp_o, np.abs(np.sin(fringe_phase(truth, x))))[0])
    passed = rho >= TOL["spearman"]
    return _result(name, passed, {"spearman_predicted": rho, "spearman_abs_sin": rho_sin})


# ─── 6. Poissonianity ────────────────────────────────────────────────

def check_poissonianity(analysis: AnalysisResult) -> CriterionResult:
    m, d = analysis.moments, analysis.dispersion
    passed = m.max_relative_spread < TOL["moment_rel"] and d.p_value > TOL["dispersion_p"]
    detail = {"m1": m.m1, "m2_root": m.m2_root, "m3_root": m.m3_root, "spread": m.max_relative_spread,
              "samples": m.n_samples, "dispersion_index": d.index, "dispersion_p": d.p_value}
    return _result("poissonianity", passed, detail)


# ─── 7. DES vs collapse model ────────────────────────────────────────

def stationary_frequencies(counts: pd.DataFrame) -> pd.DataFrame:
    """Pooled O frequency per setting and its run-to-run standard error."""
    per_run = counts.assign(freq=counts["count_o"] / (counts["count_o"] + counts["count_h"]))
    grouped = per_run.groupby("setting")
    pooled = grouped["count_o"].sum() / (grouped["count_o"].sum() + grouped["count_h"].sum())
    se = grouped["freq"].std(ddof=1) / np.sqrt(grouped["freq"].count())
    return pd.DataFrame({"frequency": pooled, "se": se}).reset_index()


def check_model_equivalence(
    cfg: ProtocolConfig, analysis: AnalysisResult, companion: Optional[AnalysisResult], truth: FringeParams
) -> CriterionResult:
    name = "model_equivalence"
    if cfg.model != "des" or companion is None:
        return _skipped(name, "collapse-model run")

    freq = stationary_frequencies(analysis.counts)
    expected = probability_from_phase(truth, fringe_phase(truth, freq["setting"].to_numpy()))
    z = np.abs(freq["frequency"].to_numpy() - expected) / freq["se"].to_numpy()
    frequencies_ok = bool(np.all(z < TOL["frequency_sigma"]))
    detail = {"max_frequency_z": float(z.max())}

    passed = frequencies_ok
    if cfg.op.y > 0:
        sum_des = float(np.abs(analysis.amplitude_column("O")).sum())
        sum_col = float(np.abs(companion.amplitude_column("O")).sum())
        t_des, t_col = analysis.median_period("O"), companion.median_period("O")
        amp_rel = abs(sum_des / sum_col - 1) if sum_col > 0 else np.inf
        period_gap = abs(t_des - t_col) if t_des is not None and t_col is not None else np.inf
        passed = passed and amp_rel <= TOL["model_amplitude_rel"] and period_gap <= TOL["period_abs"]
        detail.update({"amplitude_sum_des": sum_des, "amplitude_sum_collapse": sum_col,
                       "amplitude_relative": amp_rel, "period_des": t_des, "period_collapse": t_col})
    return _result(name, passed, detail)


# ─── 8. Analytic oracles ─────────────────────────────────────────────

def check_oracles(fp: FringeParams, seed: int = 0) -> CriterionResult:
    tol = TOL["oracle_abs"]
    r_high, r_low = reflectivity_from_ratio(1.78)
    reflectivity_ok = abs(r_high - 0.76) < TOL["reflectivity_abs"] and abs(r_low - 0.24) < TOL["reflectivity_abs"]

    binomial = compound_variance(FluctuationModel(mean_n=1000, var_n=0, mean_p=0.3, var_p=0))
    poisson = compound_variance(FluctuationModel(mean_n=1000, var_n=1000, mean_p=0.3, var_p=0))
    reductions_ok = abs(binomial - 1000 * 0.3 * 0.7) < tol and abs(poisson - 1000 * 0.3) < tol

    averages_error = 0.0
    e = fp.eps0 or 0.13
    trial = fp.model_copy(update={"eps0": e})
    for x in (1, 7, 17, 29):
        mean, var = uniform_phase_averages(trial, x, "O")
        phi = float(fringe_phase(trial, x))
        p = lambda eps: float(probability_from_phase(trial, phi + eps))  # noqa: E731
        m_q = integrate.quad(p, -e, e, epsabs=1e-14, epsrel=1e-14)[0] / (2 * e)
        v_q = integrate.quad(lambda eps: (p(eps) - m_q) ** 2, -e, e, epsabs=1e-14, epsrel=1e-14)[0] / (2 * e)
        averages_error = max(averages_error, abs(float(mean) - m_q), abs(float(var) - v_q))

    rng = np.random.default_rng(seed)
    corr_error = 0.0
    for length in range(3, 13):
        series = rng.normal(size=length)
        lags, values, valid = lag_correlations(series, method="direct")
        for k in lags[1:]:
            if valid[k]:
                corr_error = max(corr_error, abs(values[k] - float(np.clip(lagged_stats(series, int(k)).correlation, -1, 1))))

    passed = reflectivity_ok and reductions_ok and averages_error < tol and corr_error < tol
    detail = {"reflectivity": [r_high, r_low], "binomial": binomial, "poisson": poisson,
              "uniform_average_error": averages_error, "correlation_error": corr_error}
    return _result("analytic_oracles", passed, detail)


# ─── Report ──────────────────────────────────────────────────────────

def evaluate_acceptance(
    cfg: ProtocolConfig,
    analysis: AnalysisResult,
    companion: Optional[AnalysisResult] = None,
) -> List[CriterionResult]:
    truth = expected_fringe(cfg)
    results = [
        check_fringe(truth, analysis),
        check_variance(cfg, analysis),
        check_period(cfg, analysis),
        check_asymmetry(cfg, analysis, truth),
        check_amplitude_pattern(cfg, analysis, truth),
        check_poissonianity(analysis),
        check_model_equivalence(cfg, analysis, companion, truth),
        check_oracles(cfg.fp, cfg.seed),
    ]
    for r in results:
        log = logger.info if r.passed else logger.error
        log(f"{r.name}: {r.status}")
    return results


def write_report(results: Sequence[CriterionResult], path: PathLike) -> None:
    write_sidecar(path, {
        "passed": all(r.passed for r in results),
        "criteria": [asdict(r) for r in results],
    })


def run_roundtrip(cfg: ProtocolConfig, out_dir: PathLike, jobs: int = 0, bin_width: float = 0.01,
                  argv=None) -> List[CriterionResult]:
    """simulate -> analyze -> compare; raises AcceptanceError after writing acceptance.json."""
    out_dir = Path(out_dir)
    stage = "simulate"
    try:
        run_protocol(cfg, out_dir / "data", jobs)
        stage = "analyze"
        analysis = analyze_dataset(out_dir / "data", out_dir / "analysis", cfg.n_settings, cfg.dwell, jobs,
                                   bin_width=bin_width, argv=argv)
        companion = None
        if cfg.model == "des":
            stage = "companion"
            twin = cfg.model_copy(update={"model": "collapse", "fp": des_equivalent_fringe(cfg.bs, cfg.gamma, cfg.fp)})
            run_protocol(twin, out_dir / "companion" / "data", jobs)
            companion = analyze_dataset(out_dir / "companion" / "data", out_dir / "companion" / "analysis",
                                        cfg.n_settings, cfg.dwell, jobs, bin_width=bin_width, argv=argv,
                                        export_merged=False)
    except ToolkitError as e:
        logger.error(f"roundtrip stage {stage} failed: {e}")
        raise type(e)(f"roundtrip stage {stage}: {e}") from e

    results = evaluate_acceptance(cfg, analysis, companion)
    write_report(results, out_dir / "acceptance.json")
    for r in results:
        print(f"{r.name:20s} {r.status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise AcceptanceError(f"criteria failed: {', '.join(failed)}")
    return results


def criteria_by_name(results: Sequence[CriterionResult]) -> Dict[str, CriterionResult]:
    return {r.name: r for r in results}
