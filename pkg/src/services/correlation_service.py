"""Correlation service — lag statistics of time differences and labels, binning in real time."""

from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.signal import correlate

from src.domain.models import CorrelationCurve, DampedCosineFit, LaggedStats, SettingSegment
from src.exceptions import ModelError
from src.services.fitting_service import fit_damped_cosine
from src.services.timeline_service import time_differences
from src.utils.logger import logger

_DEGENERATE = 1e-12  # window variance below this fraction of the series variance is treated as zero


# ─── Single lag ──────────────────────────────────────────────────────

def lagged_stats(series: Sequence[float], k: int) -> LaggedStats:
    """Window moments over i = 1..M-k of s_i (leading) and s_{i+k} (trailing)."""
    s = np.asarray(series, dtype=float)
    m = s.size
    if k < 0 or m - k < 2:
        raise ModelError(f"lag {k} leaves fewer than 2 pairs in a series of {m}")
    lead = s[: m - k]
    trail = s[k:]
    mean0 = float(lead.mean())
    mean_k = float(trail.mean())
    return LaggedStats(
        mean0=mean0,
        mean_k=mean_k,
        var0=max(float(np.mean(lead * lead)) - mean0 * mean0, 0.0),
        var_k=max(float(np.mean(trail * trail)) - mean_k * mean_k, 0.0),
        cross=float(np.mean(lead * trail)),
        n=m - k,
    )


# ─── All lags ────────────────────────────────────────────────────────

def lag_correlations(
    series: Sequence[float], max_lag: Optional[int] = None, method: str = "auto"
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(lags, C, valid) for k = 0..max_lag with windowed normalization.

    Window sums come from prefix sums, the lagged cross sums from one
    autocorrelation of the centred series.
    """
    s = np.asarray(series, dtype=float)
    m = s.size
    if m < 2:
        raise ModelError("correlation needs at least two samples")
    if max_lag is None:
        max_lag = m - 2
    max_lag = min(max_lag, m - 2)

    z = s - s.mean()
    scale = float(np.mean(z * z))
    lags = np.arange(max_lag + 1)
    n = (m - lags).astype(float)

    s1 = np.concatenate([[0.0], np.cumsum(z)])
    s2 = np.concatenate([[0.0], np.cumsum(z * z)])
    mean0 = s1[m - lags] / n
    mean_k = (s1[m] - s1[lags]) / n
    var0 = s2[m - lags] / n - mean0 ** 2
    var_k = (s2[m] - s2[lags]) / n - mean_k ** 2

    full = correlate(z, z, mode="full", method=method)
    cross = full[m - 1: m + max_lag] / n

    threshold = _DEGENERATE * scale
    valid = (var0 > threshold) & (var_k > threshold)
    values = np.zeros(lags.size)
    denom = np.sqrt(np.where(valid, var0 * var_k, 1.0))
    values[valid] = np.clip((cross - mean0 * mean_k)[valid] / denom[valid], -1.0, 1.0)
    if valid[0]:
        values[0] = 1.0
    return lags, values, valid


def _ensemble_value(series_list: Sequence[np.ndarray], k: int, what: str) -> float:
    values = []
    for s in series_list:
        if s.size - k < 2:
            continue
        st = lagged_stats(s, k)
        if st.var0 > _DEGENERATE * np.var(s) and st.var_k > _DEGENERATE * np.var(s):
            values.append(float(np.clip(st.correlation, -1.0, 1.0)))
    if not values:
        raise ModelError(f"{what} at lag {k}: zero variance in every run")
    return float(np.mean(values))


def time_diff_correlation(segments: Sequence[SettingSegment], source: str, k: int) -> float:
    """C_E at lag k, averaged over the runs of one setting."""
    series = []
    for seg in segments:
        try:
            series.append(time_differences(seg, source))
        except ModelError:
            logger.debug(f"X={seg.setting} {source}: run skipped, fewer than 2 events")
    return _ensemble_value(series, k, f"C_{source}")


def label_series(segment: SettingSegment) -> np.ndarray:
    return segment.labels.astype(np.float64)


def label_correlation(segments: Sequence[SettingSegment], k: int) -> float:
    """C_x at lag k, averaged over the runs of one setting."""
    return _ensemble_value([label_series(seg) for seg in segments], k, "C_x")


# ─── Binning ─────────────────────────────────────────────────────────

def empty_curve(source: str, setting: int, bin_width: float, dwell: float) -> CorrelationCurve:
    n_bins = int(round(dwell / bin_width))
    return CorrelationCurve(
        source=source,
        setting=setting,
        bin_width=bin_width,
        centers=(np.arange(n_bins) + 0.5) * bin_width,
        values=np.zeros(n_bins),
        counts=np.zeros(n_bins, dtype=np.int64),
        valid=np.zeros(n_bins, dtype=bool),
    )


def bin_correlation(
    lags: np.ndarray,
    values: np.ndarray,
    valid: np.ndarray,
    mean_dt: float,
    bin_width: float = 0.01,
    dwell: float = 10.0,
    source: str = "OH",
    setting: int = 0,
    series_length: float = 0.0,
) -> CorrelationCurve:
    """Map lag k to dt = k <dt> and average the valid values per bin (k = 0 excluded)."""
    if bin_width <= 0:
        raise ModelError("bin width must be positive")
    curve = empty_curve(source, setting, bin_width, dwell)
    n_bins = curve.centers.size
    keep = (np.asarray(lags) > 0) & np.asarray(valid, dtype=bool)
    idx = np.floor(np.asarray(lags)[keep] * mean_dt / bin_width).astype(np.int64)
    vals = np.asarray(values)[keep]
    inside = idx < n_bins
    idx, vals = idx[inside], vals[inside]

    counts = np.bincount(idx, minlength=n_bins)[:n_bins]
    sums = np.bincount(idx, weights=vals, minlength=n_bins)[:n_bins]
    has = counts > 0
    means = np.zeros(n_bins)
    means[has] = np.clip(sums[has] / counts[has], -1.0, 1.0)
    return CorrelationCurve(source, setting, bin_width, curve.centers, means, counts, has, series_length)


def merge_curves(curves: Sequence[CorrelationCurve]) -> CorrelationCurve:
    """Count-weighted mean of curves sharing source, setting and binning."""
    if not curves:
        raise ModelError("nothing to merge")
    first = curves[0]
    for c in curves[1:]:
        if c.bin_width != first.bin_width or c.centers.size != first.centers.size:
            raise ModelError("curves use different binning")
    counts = np.sum([c.counts for c in curves], axis=0)
    sums = np.sum([c.values * c.counts for c in curves], axis=0)
    has = counts > 0
    values = np.zeros(counts.size)
    values[has] = np.clip(sums[has] / counts[has], -1.0, 1.0)
    lengths = [c.series_length for c in curves if c.series_length]
    return CorrelationCurve(
        first.source, first.setting, first.bin_width, first.centers, values, counts, has,
        float(np.mean(lengths)) if lengths else 0.0,
    )


def segment_series(segment: SettingSegment, source: str) -> Tuple[np.ndarray, float]:
    """Series to correlate and the mean event spacing used for the lag-to-time map."""
    if source == "x":
        dt = time_differences(segment, "OH")
        return label_series(segment), float(dt.mean())
    dt = time_differences(segment, source)
    return dt, float(dt.mean())


def correlation_curve(
    segments: Sequence[SettingSegment],
    source: str,
    bin_width: float = 0.01,
    dwell: Optional[float] = None,
    method: str = "auto",
) -> CorrelationCurve:
    """Per-run correlations of one setting, binned and merged over runs."""
    if not segments:
        raise ModelError("no segments to correlate")
    setting = segments[0].setting
    dwell = dwell or segments[0].dwell
    curves = []
    for seg in segments:
        try:
            series, mean_dt = segment_series(seg, source)
        except ModelError:
            continue
        if series.size < 3:
            continue
        lags, values, valid = lag_correlations(series, method=method)
        curves.append(bin_correlation(lags, values, valid, mean_dt, bin_width, dwell, source, setting, series.size))
    if not curves:
        logger.warning(f"X={setting} {source}: no run had enough events")
        return empty_curve(source, setting, bin_width, dwell)
    return merge_curves(curves)


def noise_floor(m: float) -> float:
    """4 / sqrt(M), the large-M fluctuation scale of C for independent samples."""
    return 4.0 / np.sqrt(m) if m > 0 else 1.0


def oscillation_amplitude(curve: CorrelationCurve, fit: Optional[DampedCosineFit] = None) -> float:
    """|a| of the damped-cosine fit of the curve, 0 when no oscillation was detected."""
    if fit is None:
        fit = fit_damped_cosine(curve)
    return abs(fit.a) if fit.detected else 0.0
