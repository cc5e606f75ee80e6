"""Fitting service: sinusoidal fringe fits, eps0 variance fit, damped-cosine period fits, phase drift."""

import math
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from scipy.optimize import least_squares, minimize_scalar
from scipy.signal import hilbert, lombscargle

from src.config import get_settings
from src.domain.models import (
    CorrelationCurve,
    DampedCosineFit,
    FringeParams,
    PhaseDriftRow,
    SinusoidFit,
    VarianceFit,
)
from src.exceptions import FitError
from src.services.statistics_service import model_std_curve
from src.utils.logger import logger

MIN_SINUSOID_POINTS = 8
MIN_CURVE_BINS = 50
CHI_SCAN_POINTS = 360
SPECTRUM_POINTS = 4096
OVERSAMPLE = 4
MIN_PERIOD_BINS = 10


def wrap_phase(chi):
    """Map to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(chi, dtype=float), 2 * np.pi)


def spectral_peak(t: np.ndarray, y: np.ndarray, omegas: np.ndarray) -> Tuple[float, np.ndarray]:
    """Angular frequency of the highest Lomb-Scargle peak and the normalized power."""
    y = np.asarray(y, dtype=float)
    power = lombscargle(np.asarray(t, dtype=float), y - y.mean(), omegas, normalize=True)
    return float(omegas[int(np.argmax(power))]), power


# ─── Sinusoid ────────────────────────────────────────────────────────

def _sinusoid_residuals(p, x, n):
    a, b, w, chi = p
    return a * (1 + b * np.cos(w * x + chi)) - n


def _sinusoid_jacobian(p, x, n):
    a, b, w, chi = p
    c = np.cos(w * x + chi)
    s = np.sin(w * x + chi)
    return np.column_stack([1 + b * c, a * c, -a * b * s * x, -a * b * s])


def canonical_sinusoid(a: float, b: float, omega: float, chi: float) -> Tuple[float, float, float, float]:
    """Gauge-fix to b >= 0, omega > 0, chi in (-pi, pi]."""
    if omega < 0:
        omega, chi = -omega, -chi
    if b < 0:
        b, chi = -b, chi + math.pi
    return a, b, omega, float(wrap_phase(chi))


def fit_sinusoid(x: Sequence[float], n: Sequence[float]) -> SinusoidFit:
    """Least-squares fit of N = A (1 + B cos(Omega X + chi))."""
    settings = get_settings()
    x = np.asarray(x, dtype=float)
    n = np.asarray(n, dtype=float)
    if x.size < MIN_SINUSOID_POINTS:
        raise FitError(f"sinusoid fit needs {MIN_SINUSOID_POINTS} points, got {x.size}")

    a0 = float(n.mean())
    hi, lo = float(n.max()), float(n.min())
    grid = np.linspace(math.pi / (x.max() - x.min()), math.pi, SPECTRUM_POINTS)
    w0, _ = spectral_peak(x, n, grid)

    if hi - lo <= 1e-12 * max(abs(a0), 1.0) or hi + lo == 0:
        logger.warning("Flat input: Omega and chi are not identifiable")
        return SinusoidFit(a=a0, b=0.0, omega=w0, chi=0.0, residual_rms=float(np.std(n)), degenerate=True)

    if w0 * (x.max() - x.min()) < 2 * math.pi:
        raise FitError("data span less than one fringe period")

    b0 = (hi - lo) / (hi + lo)
    chis = np.linspace(-math.pi, math.pi, CHI_SCAN_POINTS, endpoint=False)
    sse = [np.sum(_sinusoid_residuals((a0, b0, w0, c), x, n) ** 2) for c in chis]
    chi0 = float(chis[int(np.argmin(sse))])

    tol = settings.fit_tolerance
    result = least_squares(
        _sinusoid_residuals,
        x0=[a0, b0, w0, chi0],
        jac=_sinusoid_jacobian,
        args=(x, n),
        method="lm",
        xtol=tol,
        ftol=tol,
        gtol=tol,
        max_nfev=settings.max_fit_iterations * 5,
    )
    if not result.success:
        logger.warning(f"Sinusoid fit did not converge: {result.message}")
    a, b, w, chi = canonical_sinusoid(*result.x)
    rms = float(np.sqrt(np.mean(result.fun ** 2)))
    return SinusoidFit(a=a, b=b, omega=w, chi=chi, residual_rms=rms, converged=bool(result.success))


def fringe_from_fits(fit_o: SinusoidFit, fit_h: SinusoidFit, eps0: float = 0.0) -> FringeParams:
    """Fringe parameters of both beams; a flat or empty beam is a fit failure."""
    try:
        return FringeParams(
            a_o=fit_o.a, a_h=fit_h.a, b_o=fit_o.b, b_h=fit_h.b,
            omega_o=fit_o.omega, omega_h=fit_h.omega,
            chi_o=fit_o.chi, chi_h=fit_h.chi, eps0=eps0,
        )
    except ValidationError as e:
        problems = "; ".join(err["msg"] for err in e.errors())
        raise FitError(f"fitted fringe is not physical: {problems}") from e


# ─── Variance model ──────────────────────────────────────────────────

def fit_variance_model(
    x: Sequence[float],
    observed_var_o: Sequence[float],
    fp: FringeParams,
    mean_n: float,
    var_n: float,
    observed_var_h: Optional[Sequence[float]] = None,
) -> VarianceFit:
    """eps0 in [0, 0.5] minimizing the squared misfit of the compound variance."""
    x = np.asarray(x, dtype=float)
    var_o = np.asarray(observed_var_o, dtype=float)
    var_h = None if observed_var_h is None else np.asarray(observed_var_h, dtype=float)
    if not np.any(var_o) and (var_h is None or not np.any(var_h)):
        raise FitError("all observed variances are zero")

    def residuals(eps0: float) -> np.ndarray:
        trial = fp.model_copy(update={"eps0": eps0})
        res = model_std_curve(trial, mean_n, var_n, x, "O") ** 2 - var_o
        if var_h is not None:
            res = np.concatenate([res, model_std_curve(trial, mean_n, var_n, x, "H") ** 2 - var_h])
        return res

    result = minimize_scalar(lambda e: float(np.sum(residuals(e) ** 2)), bounds=(0.0, 0.5), method="bounded",
                             options={"xatol": 1e-6})
    eps0 = float(result.x)
    rms = float(np.sqrt(np.mean(residuals(eps0) ** 2)))
    logger.info(f"Variance model: eps0 = {eps0:.4f}")
    return VarianceFit(eps0=eps0, residual_rms=rms, converged=bool(result.success))


# ─── Damped cosine ───────────────────────────────────────────────────

def _damped_residuals(p, t, y):
    a, b, period = p
    return a * np.exp(-b * t) * np.cos(2 * np.pi * t / period) - y


def _damped_jacobian(p, t, y):
    a, b, period = p
    e = np.exp(-b * t)
    arg = 2 * np.pi * t / period
    c, s = np.cos(arg), np.sin(arg)
    return np.column_stack([e * c, -t * a * e * c, a * e * s * arg / period])


def false_alarm_probability(z: float, n_frequencies: float) -> float:
    """1 - (1 - exp(-z))^M for the highest of M independent periodogram peaks."""
    return float(-np.expm1(n_frequencies * np.log1p(-np.exp(-z))))


def detect_oscillation(t: np.ndarray, y: np.ndarray, bin_width: float) -> Tuple[float, float]:
    """(peak angular frequency, false-alarm probability) of the dominant periodicity."""
    span = float(t[-1] - t[0])
    w_min = 2 * np.pi / span
    w_max = 2 * np.pi / (MIN_PERIOD_BINS * bin_width)
    if not np.any(y - y.mean()):
        return w_min, 1.0
    step = 2 * np.pi / (span * OVERSAMPLE)
    omegas = np.arange(w_min, w_max, step)
    w0, power = spectral_peak(t, y, omegas)
    z = float(power.max()) * t.size / 2
    n_frequencies = span * (w_max - w_min) / (2 * np.pi)
    return w0, false_alarm_probability(z, n_frequencies)


def fit_damped_cosine(curve: CorrelationCurve, max_dt: Optional[float] = None) -> DampedCosineFit:
    """Fit a exp(-b dt) cos(2 pi dt / T); a = 0 with detected=False when no peak clears the noise."""
    settings = get_settings()
    if max_dt is None:
        max_dt = settings.fit_window * curve.centers.size * curve.bin_width
    t, y = curve.valid_points(max_dt)
    if t.size < MIN_CURVE_BINS:
        raise FitError(f"X={curve.setting} {curve.source}: {t.size} valid bins, need {MIN_CURVE_BINS}")

    w0, fap = detect_oscillation(t, y, curve.bin_width)
    period0 = 2 * np.pi / w0
    if fap >= settings.detection_fap:
        logger.debug(f"X={curve.setting} {curve.source}: no oscillation (FAP {fap:.3g})")
        return DampedCosineFit(a=0.0, b=0.0, period=period0, residual_rms=float(np.sqrt(np.mean(y ** 2))),
                               detected=False, false_alarm=fap)

    envelope = np.abs(hilbert(y - y.mean()))
    slope = np.polyfit(t, np.log(np.maximum(envelope, 1e-12)), 1)[0]
    b0 = max(-float(slope), 0.0)
    basis = np.exp(-b0 * t) * np.cos(w0 * t)
    a0 = float(np.clip(basis @ y / (basis @ basis), -0.99, 0.99))

    tol = settings.fit_tolerance
    try:
        result = least_squares(
            _damped_residuals,
            x0=[a0, b0, period0],
            jac=_damped_jacobian,
            args=(t, y),
            bounds=([-1.0, 0.0, period0 / 2], [1.0, np.inf, period0 * 2]),
            method="trf",
            xtol=tol,
            ftol=tol,
            max_nfev=settings.max_fit_iterations * 4,
        )
    except ValueError as e:
        raise FitError(f"X={curve.setting} {curve.source}: {e}") from e

    a, b, period = (float(v) for v in result.x)
    rms = float(np.sqrt(np.mean(result.fun ** 2)))
    if not result.success:
        logger.warning(f"X={curve.setting} {curve.source}: damped-cosine fit did not converge")
    return DampedCosineFit(a=a, b=b, period=period, residual_rms=rms, detected=True,
                           false_alarm=fap, converged=bool(result.success))


# ─── Phase drift ─────────────────────────────────────────────────────

def track_phase_offsets(
    run_fits: Sequence[Optional[Tuple[SinusoidFit, SinusoidFit]]],
    start_seconds: Sequence[float],
    total_counts: Sequence[int],
) -> list:
    """Per-run chi_O, chi_H (unwrapped across runs) and chi_H - chi_O mod 2 pi."""
    if len(run_fits) < 2:
        raise FitError("phase tracking needs at least two runs")
    missing = [i + 1 for i, f in enumerate(run_fits) if f is None]
    if missing:
        raise FitError(f"missing fit for run(s) {missing}")

    chi_o = np.unwrap([f[0].chi for f in run_fits])
    chi_h = np.unwrap([f[1].chi for f in run_fits])
    delta = np.mod(chi_h - chi_o, 2 * np.pi)
    return [
        PhaseDriftRow(run=i + 1, start_seconds=float(start_seconds[i]), chi_o=float(chi_o[i]),
                      chi_h=float(chi_h[i]), delta=float(delta[i]), total_counts=int(total_counts[i]))
        for i in range(len(run_fits))
    ]


def phase_drift_slope(rows: Sequence[PhaseDriftRow]) -> float:
    """Least-squares slope of the unwrapped chi_O per run (rad/run)."""
    runs = np.array([r.run for r in rows], dtype=float)
    chi = np.array([r.chi_o for r in rows])
    return float(np.polyfit(runs, chi, 1)[0])
