"""Analysis service — the analyze/fit/correlate pipelines over a directory of stamp-file pairs.

Pipeline:
  1. load_runs            parse, merge and segment every pair (parallel per run)
  2. analyze_counts       pooled sinusoid fits of the per-setting mean counts
  3. analyze_phase_drift  per-run fits, chi_O and chi_H across runs
  4. analyze_variance     eps0 from the per-setting count variance
  5. analyze_correlations C_O, C_H, C_OH, C_x per setting (parallel per setting) + damped-cosine fits
  6. analyze_poissonianity exponential moment ratios and the dispersion test
"""

import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy

from src.config import get_settings
from src.domain.models import (
    SOURCES,
    CorrelationCurve,
    DampedCosineFit,
    DispersionTest,
    FringeParams,
    MomentRatios,
    PhaseDriftRow,
    RunRecord,
    SettingSegment,
    SinusoidFit,
    VarianceFit,
)
from src.exceptions import ConfigError, FitError, ModelError
from src.services.correlation_service import correlation_curve, noise_floor, oscillation_amplitude
from src.services.fitting_service import (
    fit_damped_cosine,
    fit_sinusoid,
    fit_variance_model,
    fringe_from_fits,
    phase_drift_slope,
    track_phase_offsets,
)
from src.services.quantum_service import (
    fringe_phase,
    h_fringe_prediction,
    reflectivity_from_ratio,
)
from src.services.statistics_service import (
    baseline_std_curve,
    model_std_curve,
    moment_ratios,
    observed_count_moments,
    poisson_dispersion_test,
    setting_count_table,
    total_count_model,
)
from src.services.timeline_service import load_run, time_differences, trim_segment
from src.storage.repository import discover_stamp_pairs, write_sidecar, write_table
from src.utils.logger import logger

PathLike = Union[str, Path]


# ─── Results ─────────────────────────────────────────────────────────

@dataclass
class CountAnalysis:
    fit_o: SinusoidFit
    fit_h: SinusoidFit
    fringe: FringeParams
    table: pd.DataFrame


@dataclass
class AnalysisResult:
    out_dir: Path
    n_runs: int
    n_settings: int
    counts: pd.DataFrame
    fringe: Optional[FringeParams] = None
    count_table: Optional[pd.DataFrame] = None
    fit_o: Optional[SinusoidFit] = None
    fit_h: Optional[SinusoidFit] = None
    variance: Optional[VarianceFit] = None
    std_table: Optional[pd.DataFrame] = None
    drift: List[PhaseDriftRow] = field(default_factory=list)
    curves: Dict[Tuple[str, int], CorrelationCurve] = field(default_factory=dict)
    amplitudes: Optional[pd.DataFrame] = None
    moments: Optional[MomentRatios] = None
    dispersion: Optional[DispersionTest] = None
    discarded_events: int = 0
    stationary_events: int = 0

    def median_period(self, source: str) -> Optional[float]:
        """Median fitted T over settings where an oscillation was detected."""
        if self.amplitudes is None:
            return None
        rows = self.amplitudes[(self.amplitudes["source"] == source) & self.amplitudes["detected"]]
        return float(rows["period"].median()) if len(rows) else None

    def amplitude_column(self, source: str) -> np.ndarray:
        """|a| per setting (0 where nothing was detected), X = 1..n."""
        rows = self.amplitudes[self.amplitudes["source"] == source].sort_values("setting")
        return rows["oscillation_amplitude"].to_numpy(dtype=float)


# ─── Loading ─────────────────────────────────────────────────────────

def resolve_jobs(jobs: int) -> int:
    return jobs if jobs and jobs > 0 else (os.cpu_count() or 1)


def _load_one(args) -> RunRecord:
    run, o_path, h_path, n_settings, dwell, merged_csv = args
    return load_run(run, o_path, h_path, n_settings, dwell, merged_csv)


def load_runs(
    data_dir: PathLike,
    n_settings: int = 33,
    dwell: float = 10.0,
    jobs: int = 0,
    merged_dir: Optional[PathLike] = None,
) -> List[RunRecord]:
    """All runs of a data directory, numbered 1..n in run-id order.

    With merged_dir set, each run's merged series goes to merged_<run id>.csv there.
    """
    pairs = discover_stamp_pairs(data_dir)
    tasks = [
        (i, o, h, n_settings, dwell, Path(merged_dir) / f"merged_{run_id}.csv" if merged_dir is not None else None)
        for i, (run_id, o, h) in enumerate(pairs, start=1)
    ]
    jobs = min(resolve_jobs(jobs), len(tasks))
    if jobs == 1:
        return [_load_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_load_one, tasks))


def parse_window(spec: Optional[str], dwell: float) -> Optional[Tuple[float, float]]:
    """'first:5' -> (0, 5), 'last:5' -> (dwell - 5, inf) in seconds from the first event."""
    if not spec:
        return None
    try:
        where, seconds = spec.split(":")
        seconds = float(seconds)
    except ValueError:
        raise ConfigError(f"window must look like first:<s> or last:<s>, got {spec!r}") from None
    if seconds <= 0 or seconds > dwell:
        raise ConfigError(f"window length must lie in (0, {dwell}], got {seconds}")
    if where == "first":
        return 0.0, seconds
    if where == "last":
        return dwell - seconds, np.inf
    raise ConfigError(f"window must start with 'first' or 'last', got {where!r}")


def setting_segments(runs: Sequence[RunRecord], setting: int, window=None) -> List[SettingSegment]:
    segments = [r.segment(setting) for r in runs]
    if window is not None:
        segments = [trim_segment(s, *window) for s in segments]
    return segments


# ─── Counts ──────────────────────────────────────────────────────────

def analyze_counts(counts: pd.DataFrame) -> CountAnalysis:
    """Sinusoid fits of the per-setting mean counts of both beams."""
    o = observed_count_moments(counts, "count_o")
    h = observed_count_moments(counts, "count_h")
    x = o["setting"].to_numpy(dtype=float)
    fit_o = fit_sinusoid(x, o["mean"].to_numpy())
    fit_h = fit_sinusoid(x, h["mean"].to_numpy())
    fringe = fringe_from_fits(fit_o, fit_h)
    logger.info(
        f"Counts fit: A_O={fit_o.a:.1f} B_O={fit_o.b:.3f} Omega_O={fit_o.omega:.4f} chi_O={fit_o.chi:.3f}; "
        f"A_H={fit_h.a:.1f} B_H={fit_h.b:.3f} Omega_H={fit_h.omega:.4f} chi_H={fit_h.chi:.3f}"
    )
    table = pd.DataFrame({
        "setting": o["setting"].astype(int),
        "mean_o": o["mean"],
        "std_o": np.sqrt(o["variance"]),
        "fit_o": fit_o.evaluate(x),
        "mean_h": h["mean"],
        "std_h": np.sqrt(h["variance"]),
        "fit_h": fit_h.evaluate(x),
    })
    return CountAnalysis(fit_o, fit_h, fringe, table)


def analyze_phase_drift(counts: pd.DataFrame, runs: Sequence[RunRecord]) -> List[PhaseDriftRow]:
    """Per-run chi_O and chi_H; empty when there is only one run."""
    if len(runs) < 2:
        logger.info("Single run: phase drift not tracked")
        return []
    fits, kept = [], []
    for run in runs:
        rows = counts[counts["run"] == run.run].sort_values("setting")
        x = rows["setting"].to_numpy(dtype=float)
        try:
            fits.append((fit_sinusoid(x, rows["count_o"].to_numpy()), fit_sinusoid(x, rows["count_h"].to_numpy())))
            kept.append(run)
        except FitError as e:
            logger.warning(f"Run {run.run} left out of the phase drift: {e}")
    if len(kept) < 2:
        logger.warning("Fewer than two runs could be fitted: phase drift not tracked")
        return []
    totals = [int(counts.loc[counts["run"] == r.run, ["count_o", "count_h"]].to_numpy().sum()) for r in kept]
    rows = track_phase_offsets(fits, [r.start_seconds for r in kept], totals)
    rows = [PhaseDriftRow(r.run, row.start_seconds, row.chi_o, row.chi_h, row.delta, row.total_counts)
            for r, row in zip(kept, rows)]
    logger.info(f"Phase drift: {phase_drift_slope(rows):+.4f} rad/run")
    return rows


def analyze_variance(counts: pd.DataFrame, fringe: FringeParams) -> Tuple[VarianceFit, pd.DataFrame]:
    """eps0 fit and the std-vs-setting table with model and no-fluctuation baseline."""
    o = observed_count_moments(counts, "count_o")
    h = observed_count_moments(counts, "count_h")
    x = o["setting"].to_numpy(dtype=float)
    mean_n, var_n = total_count_model(counts)
    fit = fit_variance_model(x, o["variance"].to_numpy(), fringe, mean_n, var_n, h["variance"].to_numpy())
    fitted = fringe.model_copy(update={"eps0": fit.eps0})
    baseline = baseline_std_curve(fringe, mean_n, x)
    table = pd.DataFrame({
        "setting": o["setting"].astype(int),
        "std_o": np.sqrt(o["variance"]),
        "model_o": model_std_curve(fitted, mean_n, var_n, x, "O"),
        "baseline_o": baseline,
        "std_h": np.sqrt(h["variance"]),
        "model_h": model_std_curve(fitted, mean_n, var_n, x, "H"),
        "baseline_h": baseline,
        "abs_sin_phase": np.abs(np.sin(fringe_phase(fringe, x))),
    })
    return fit, table


# ─── Correlations ────────────────────────────────────────────────────

def _setting_task(args) -> List[Tuple[CorrelationCurve, Optional[DampedCosineFit]]]:
    segments, sources, bin_width, dwell = args
    out = []
    for source in sources:
        curve = correlation_curve(segments, source, bin_width, dwell)
        try:
            fit = fit_damped_cosine(curve)
        except FitError as e:
            logger.warning(str(e))
            fit = None
        out.append((curve, fit))
    return out


def analyze_correlations(
    runs: Sequence[RunRecord],
    sources: Sequence[str] = SOURCES,
    bin_width: float = 0.01,
    dwell: float = 10.0,
    jobs: int = 0,
    window: Optional[Tuple[float, float]] = None,
    fringe: Optional[FringeParams] = None,
) -> Tuple[Dict[Tuple[str, int], CorrelationCurve], pd.DataFrame]:
    """Binned correlation curve and damped-cosine fit per (source, setting)."""
    n_settings = len(runs[0].segments)
    tasks = [(setting_segments(runs, x, window), tuple(sources), bin_width, dwell) for x in range(1, n_settings + 1)]
    jobs = min(resolve_jobs(jobs), len(tasks))
    if jobs == 1:
        results = [_setting_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_setting_task, tasks))

    curves: Dict[Tuple[str, int], CorrelationCurve] = {}
    rows = []
    for setting, pairs in enumerate(results, start=1):
        abs_sin = float(abs(np.sin(fringe_phase(fringe, setting)))) if fringe is not None else np.nan
        for curve, fit in pairs:
            curves[(curve.source, setting)] = curve
            rows.append({
                "setting": setting,
                "source": curve.source,
                "amplitude": fit.a if fit else np.nan,
                "oscillation_amplitude": oscillation_amplitude(curve, fit) if fit else 0.0,
                "damping": fit.b if fit else np.nan,
                "period": fit.period if fit else np.nan,
                "detected": bool(fit.detected) if fit else False,
                "false_alarm": fit.false_alarm if fit else np.nan,
                "noise_floor": noise_floor(curve.series_length),
                "series_length": curve.series_length,
                "abs_sin_phase": abs_sin,
            })
    table = pd.DataFrame(rows)
    for source in sources:
        hits = table[(table["source"] == source) & table["detected"]]
        if len(hits):
            logger.info(f"C_{source}: oscillation at {len(hits)}/{n_settings} settings, median T = {hits['period'].median():.3f} s")
        else:
            logger.info(f"C_{source}: no oscillation detected")
    return curves, table


def curve_frame(curve: CorrelationCurve) -> pd.DataFrame:
    return pd.DataFrame({
        "dt": curve.centers,
        "value": curve.values,
        "sample_count": curve.counts,
        "valid": curve.valid.astype(int),
    })


# ─── Poissonianity ───────────────────────────────────────────────────

def analyze_poissonianity(runs: Sequence[RunRecord], counts: pd.DataFrame) -> Tuple[MomentRatios, DispersionTest]:
    dt = []
    for run in runs:
        for seg in run.segments:
            try:
                dt.append(time_differences(seg, "OH"))
            except ModelError:
                continue
    if not dt:
        raise FitError("Poissonianity: no segment has two or more events")
    ratios = moment_ratios(np.concatenate(dt))
    dispersion = poisson_dispersion_test((counts["count_o"] + counts["count_h"]).to_numpy())
    logger.info(
        f"OH time differences: m1={ratios.m1:.6g} m2={ratios.m2_root:.6g} m3={ratios.m3_root:.6g} "
        f"(spread {ratios.max_relative_spread:.2%}); dispersion p={dispersion.p_value:.3g}"
    )
    return ratios, dispersion


# ─── Output ──────────────────────────────────────────────────────────

def parameter_table(result: AnalysisResult) -> pd.DataFrame:
    rows = []
    if result.fringe is not None:
        fp = result.fringe
        rows += [(k, v) for k, v in fp.model_dump().items() if k != "eps0"]
        rows.append(("delta_chi", float(np.mod(fp.chi_h - fp.chi_o, 2 * np.pi))))
        r_high, r_low = reflectivity_from_ratio(max(fp.a_h / fp.a_o, 1.0))
        rows += [
            ("ratio_alpha", fp.a_h / fp.a_o),
            ("reflectivity_high", r_high),
            ("reflectivity_low", r_low),
            ("b_h_ideal", h_fringe_prediction(r_low)),
        ]
    if result.variance is not None:
        rows += [("eps0", result.variance.eps0), ("eps0_residual_rms", result.variance.residual_rms)]
    if result.drift:
        rows.append(("phase_drift_per_run", phase_drift_slope(result.drift)))
    if result.amplitudes is not None:
        for source in SOURCES:
            period = result.median_period(source)
            if period is not None:
                rows.append((f"period_{source}", period))
    if result.moments is not None:
        m = result.moments
        rows += [("dt_m1", m.m1), ("dt_m2_root", m.m2_root), ("dt_m3_root", m.m3_root)]
    if result.dispersion is not None:
        rows += [("dispersion_index", result.dispersion.index), ("dispersion_p", result.dispersion.p_value)]
    if result.stationary_events:
        rows.append(("collision_fraction", result.discarded_events / result.stationary_events))
    return pd.DataFrame(rows, columns=["parameter", "value"])


def write_outputs(result: AnalysisResult, argv: Optional[Sequence[str]] = None) -> None:
    out = result.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_table(result.counts, out / "counts_per_segment.csv")
    if result.count_table is not None:
        write_table(result.count_table, out / "counts_vs_setting.csv")
    if result.drift:
        write_table(pd.DataFrame([vars(r) for r in result.drift]), out / "phase_drift.csv")
    if result.std_table is not None:
        write_table(result.std_table, out / "std_vs_setting.csv")
    for (source, setting), curve in sorted(result.curves.items()):
        write_table(curve_frame(curve), out / f"correlation_{source}_X{setting:02d}.csv")
    if result.amplitudes is not None:
        write_table(result.amplitudes, out / "amplitude_vs_setting.csv")
    write_table(parameter_table(result), out / "fit_parameters.csv")
    write_sidecar(out / "metadata.json", {
        "created": datetime.now(timezone.utc).isoformat(),
        "argv": list(argv if argv is not None else sys.argv),
        "runs": result.n_runs,
        "settings": result.n_settings,
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__},
    })
    logger.info(f"Wrote analysis tables to {out}")


# ─── Entry points ────────────────────────────────────────────────────

def _new_result(out_dir: PathLike, runs: Sequence[RunRecord], n_settings: int) -> AnalysisResult:
    return AnalysisResult(
        Path(out_dir), len(runs), n_settings, setting_count_table(runs),
        discarded_events=sum(r.discarded_collisions for r in runs),
        stationary_events=sum(r.stationary_events for r in runs),
    )


def _fit_stage(result: AnalysisResult, runs: Sequence[RunRecord]) -> None:
    counts = analyze_counts(result.counts)
    result.count_table = counts.table
    result.fit_o, result.fit_h, result.fringe = counts.fit_o, counts.fit_h, counts.fringe
    result.drift = analyze_phase_drift(result.counts, runs)
    if len(runs) >= 2:
        result.variance, result.std_table = analyze_variance(result.counts, counts.fringe)
    else:
        logger.info("Single run: count variance not available")


def run_fit(data_dir: PathLike, out_dir: PathLike, n_settings: int = 33, dwell: float = 10.0,
            jobs: int = 0, argv=None) -> AnalysisResult:
    """Counts, phase drift and variance only."""
    runs = load_runs(data_dir, n_settings, dwell, jobs)
    result = _new_result(out_dir, runs, n_settings)
    _fit_stage(result, runs)
    write_outputs(result, argv)
    return result


def run_correlate(
    data_dir: PathLike,
    out_dir: PathLike,
    n_settings: int = 33,
    dwell: float = 10.0,
    jobs: int = 0,
    sources: Sequence[str] = SOURCES,
    bin_width: float = 0.01,
    window: Optional[str] = None,
    argv=None,
) -> AnalysisResult:
    """Correlation curves and their fits, optionally on the first/last seconds of each dwell."""
    trim = parse_window(window, dwell)
    runs = load_runs(data_dir, n_settings, dwell, jobs)
    result = _new_result(out_dir, runs, n_settings)
    result.curves, result.amplitudes = analyze_correlations(runs, sources, bin_width, dwell, jobs, trim)
    write_outputs(result, argv)
    return result


def analyze_dataset(
    data_dir: PathLike,
    out_dir: PathLike,
    n_settings: int = 33,
    dwell: float = 10.0,
    jobs: int = 0,
    sources: Sequence[str] = SOURCES,
    bin_width: float = 0.01,
    window: Optional[str] = None,
    argv=None,
    export_merged: Optional[bool] = None,
) -> AnalysisResult:
    """Full pipeline: every table of the CSV suite plus the merged series of each run."""
    trim = parse_window(window, dwell)
    if export_merged is None:
        export_merged = get_settings().export_merged
    runs = load_runs(data_dir, n_settings, dwell, jobs, merged_dir=out_dir if export_merged else None)
    result = _new_result(out_dir, runs, n_settings)
    _fit_stage(result, runs)
    result.curves, result.amplitudes = analyze_correlations(
        runs, sources, bin_width, dwell, jobs, trim, result.fringe
    )
    result.moments, result.dispersion = analyze_poissonianity(runs, result.counts)
    write_outputs(result, argv)
    for source in ("O", "x"):
        period = result.median_period(source)
        if period is not None:
            print(f"T from C_{source}: {period:.3f} s")
    return result

