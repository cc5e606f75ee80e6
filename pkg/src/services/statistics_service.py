"""Binomial and compound count variance, uniform phase averages, Poissonianity."""

from typing import Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from src.domain.models import (
    CountMoments,
    DispersionTest,
    FluctuationModel,
    FringeParams,
    MomentRatios,
    RunRecord,
)
from src.exceptions import ModelError
from src.services.quantum_service import fringe_phase, relative_frequencies
from src.utils.logger import logger

MIN_MOMENT_SAMPLES = 1000
_SERIES_CUTOFF = 1e-4


# ─── Count distributions ─────────────────────────────────────────────

def binomial_moments(n: int, p: float) -> CountMoments:
    """Mean and variance of Binomial(n, p)."""
    if n < 0 or not 0 <= p <= 1:
        raise ModelError(f"binomial needs n >= 0 and p in [0, 1], got n={n}, p={p}")
    return CountMoments(mean=n * p, variance=n * p * (1 - p), n_runs=1)


def compound_variance(fm: FluctuationModel) -> float:
    """Variance of N_O when both the run size N and the probability P fluctuate."""
    return (
        fm.var_n * fm.var_p
        + fm.mean_p ** 2 * fm.var_n
        + fm.mean_n * (fm.mean_n - 1) * fm.var_p
        + fm.mean_n * fm.mean_p * (1 - fm.mean_p)
    )


# ─── Uniform phase fluctuations ──────────────────────────────────────

def sinc(x) -> np.ndarray:
    """sin(x)/x with a series branch near 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    x2 = x * x
    return np.where(small, 1 - x2 / 6 + x2 * x2 / 120, np.sin(safe) / safe)


def uniform_phase_averages(fp: FringeParams, x, beam: str = "O") -> Tuple[np.ndarray, np.ndarray]:
    """Exact mean and variance of P_beam for eps ~ U[-eps0, eps0]."""
    phi = fringe_phase(fp, x)
    e = fp.eps0
    a = fp.o_fraction
    b = fp.b_o
    mean_cos = np.cos(phi) * sinc(e)
    mean_cos2 = 0.5 + 0.5 * np.cos(2 * phi) * sinc(2 * e)
    mean_o = a * (1 + b * mean_cos)
    var = np.maximum((a * b) ** 2 * (mean_cos2 - mean_cos ** 2), 0.0)
    if beam == "O":
        return mean_o, var
    if beam == "H":
        return 1 - mean_o, var
    raise ModelError(f"unknown beam {beam!r}")


def expanded_phase_averages(fp: FringeParams, x, beam: str = "O") -> Tuple[np.ndarray, np.ndarray]:
    """Second-order small-eps0 expansion of uniform_phase_averages."""
    phi = fringe_phase(fp, x)
    e = fp.eps0
    a = fp.o_fraction
    mean_o = a * (1 + fp.b_o * np.cos(phi) * (1 - e * e / 6))
    var = (e * e / 3) * (a * fp.b_o) ** 2 * np.sin(phi) ** 2
    return (mean_o if beam == "O" else 1 - mean_o), var


def model_std_curve(fp: FringeParams, mean_n: float, var_n: float, x, beam: str = "O") -> np.ndarray:
    """Compound-variance std per setting for the fitted fringe and eps0."""
    mean_p, var_p = uniform_phase_averages(fp, x, beam)
    out = []
    for mp, vp in zip(np.atleast_1d(mean_p), np.atleast_1d(var_p)):
        fm = FluctuationModel(mean_n=mean_n, var_n=var_n, mean_p=float(mp), var_p=float(vp))
        out.append(compound_variance(fm))
    return np.sqrt(np.asarray(out))


def baseline_std_curve(fp: FringeParams, mean_n: float, x) -> np.ndarray:
    """sqrt(N P_O P_H) without phase fluctuations."""
    p_o, p_h = relative_frequencies(fp, x)
    return np.sqrt(mean_n * p_o * p_h)


# ─── Observed counts ─────────────────────────────────────────────────

def setting_count_table(runs: Sequence[RunRecord]) -> pd.DataFrame:
    """One row per (run, setting) with the O and H counts."""
    rows = [
        {"run": r.run, "setting": s.setting, "count_o": s.count_o, "count_h": s.count_h}
        for r in runs
        for s in r.segments
    ]
    return pd.DataFrame(rows, columns=["run", "setting", "count_o", "count_h"])


def observed_count_moments(counts: pd.DataFrame, column: str) -> pd.DataFrame:
    """Per-setting mean, variance (ddof=1) and run count of one count column."""
    grouped = counts.groupby("setting")[column]
    out = pd.DataFrame({
        "mean": grouped.mean(),
        "variance": grouped.var(ddof=1).fillna(0.0),
        "n_runs": grouped.count(),
    })
    return out.reset_index()


def total_count_model(counts: pd.DataFrame) -> Tuple[float, float]:
    """<N> and sigma_N^2 of the per-segment total counts."""
    total = (counts["count_o"] + counts["count_h"]).to_numpy(dtype=float)
    if total.size < 2:
        raise ModelError("need at least two segments for the run-size variance")
    return float(total.mean()), float(total.var(ddof=1))


# ─── Poissonianity ───────────────────────────────────────────────────

def moment_ratios(dt: Sequence[float]) -> MomentRatios:
    """Equal for an exponential law: <dt>, (<dt^2>/2)^(1/2), (<dt^3>/6)^(1/3)."""
    dt = np.asarray(dt, dtype=float)
    if dt.size == 0:
        raise ModelError("moment_ratios needs at least one sample")
    low = dt.size < MIN_MOMENT_SAMPLES
    if low:
        logger.warning(f"moment_ratios on {dt.size} samples, below {MIN_MOMENT_SAMPLES}")
    return MomentRatios(
        m1=float(dt.mean()),
        m2_root=float(np.sqrt(np.mean(dt ** 2) / 2)),
        m3_root=float(np.cbrt(np.mean(dt ** 3) / 6)),
        n_samples=int(dt.size),
        low_statistics=low,
    )


def poisson_dispersion_test(counts: Sequence[float]) -> DispersionTest:
    """Index-of-dispersion test; two-sided p-value from chi2(n - 1)."""
    counts = np.asarray(counts, dtype=float)
    if counts.size < 2 or counts.mean() <= 0:
        raise ModelError("dispersion test needs two or more positive counts")
    dof = counts.size - 1
    statistic = float(((counts - counts.mean()) ** 2).sum() / counts.mean())
    p_low = stats.chi2.cdf(statistic, dof)
    p_value = float(min(1.0, 2 * min(p_low, 1 - p_low)))
    return DispersionTest(index=statistic / dof, statistic=statistic, dof=dof, p_value=p_value)
