import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from src.domain.models import FluctuationModel, FringeParams, RunRecord, SettingSegment, O_LABEL, H_LABEL
from src.exceptions import ModelError
from src.services.quantum_service import fringe_phase, probability_from_phase
from src.services.statistics_service import (
    baseline_std_curve,
    binomial_moments,
    compound_variance,
    expanded_phase_averages,
    model_std_curve,
    moment_ratios,
    observed_count_moments,
    poisson_dispersion_test,
    setting_count_table,
    sinc,
    total_count_model,
    uniform_phase_averages,
)


# ─── Count distributions ─────────────────────────────────────────────

def test_binomial_moments():
    m = binomial_moments(100, 0.3)
    assert m.mean == pytest.approx(30.0)
    assert m.variance == pytest.approx(21.0)
    with pytest.raises(ModelError):
        binomial_moments(10, 1.5)


def test_binomial_matches_exhaustive_pmf():
    n, p = 10, 0.3
    pmf = np.array([math.comb(n, k) * p ** k * (1 - p) ** (n - k) for k in range(n + 1)])
    k = np.arange(n + 1)
    mean = float((k * pmf).sum())
    m = binomial_moments(n, p)
    assert pmf.sum() == pytest.approx(1.0)
    assert m.mean == pytest.approx(mean, abs=1e-12)
    assert m.variance == pytest.approx(float(((k - mean) ** 2 * pmf).sum()), abs=1e-12)


def _compound_sample(rng, mean_n, var_n, p_lo, p_hi, size):
    """N from a gamma-Poisson mixture, P uniform, then N_O ~ Binomial(N, P)."""
    shape = mean_n ** 2 / (var_n - mean_n)
    n = rng.negative_binomial(shape, mean_n / var_n, size)
    p = rng.uniform(p_lo, p_hi, size)
    return rng.binomial(n, p)


def test_compound_variance_matches_monte_carlo():
    rng = np.random.default_rng(2024)
    z_scores = []
    for _ in range(20):
        mean_n = rng.uniform(50, 5000)
        var_n = mean_n * rng.uniform(1.05, 3.0)
        p_lo = rng.uniform(0.05, 0.5)
        p_hi = p_lo + rng.uniform(0.0, 0.4)
        fm = FluctuationModel(mean_n=mean_n, var_n=var_n, mean_p=(p_lo + p_hi) / 2, var_p=(p_hi - p_lo) ** 2 / 12)
        counts = _compound_sample(rng, mean_n, var_n, p_lo, p_hi, 1_000_000).astype(float)
        centred = counts - counts.mean()
        sample_var = float(np.mean(centred ** 2))
        se = math.sqrt((np.mean(centred ** 4) - sample_var ** 2) / counts.size)
        z_scores.append((sample_var - compound_variance(fm)) / se)
    z = np.abs(z_scores)
    assert z.max() < 4.0
    assert np.count_nonzero(z > 3.0) <= 1


@given(st.floats(1, 1e5), st.floats(0, 1))
def test_compound_reduces_to_binomial_and_poisson(n, p):
    binomial = compound_variance(FluctuationModel(mean_n=n, var_n=0, mean_p=p, var_p=0))
    poisson = compound_variance(FluctuationModel(mean_n=n, var_n=n, mean_p=p, var_p=0))
    assert abs(binomial - n * p * (1 - p)) <= 1e-10 * max(1.0, n)
    assert abs(poisson - n * p) <= 1e-10 * max(1.0, n)


def test_var_p_bounded():
    with pytest.raises(ValueError):
        FluctuationModel(mean_n=10, var_n=10, mean_p=0.5, var_p=0.3)


# ─── Uniform phase fluctuations ──────────────────────────────────────

def test_sinc_near_zero():
    assert sinc(0.0) == 1.0
    assert sinc(1e-5) == pytest.approx(np.sin(1e-5) / 1e-5, abs=1e-15)
    assert sinc(np.pi) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.5), st.integers(1, 33), st.sampled_from(["O", "H"]))
def test_uniform_averages_match_quadrature(eps0, x, beam):
    fp = FringeParams(eps0=eps0)
    phi = float(fringe_phase(fp, x))

    def p(eps):
        p_o = float(probability_from_phase(fp, phi + eps))
        return p_o if beam == "O" else 1 - p_o

    mean_q = integrate.quad(p, -eps0, eps0, epsabs=1e-14, epsrel=1e-14)[0] / (2 * eps0)
    var_q = integrate.quad(lambda e: (p(e) - mean_q) ** 2, -eps0, eps0, epsabs=1e-14, epsrel=1e-14)[0] / (2 * eps0)
    mean, var = uniform_phase_averages(fp, x, beam)
    assert abs(mean - mean_q) < 1e-10
    assert abs(var - var_q) < 1e-10


def test_zero_eps_has_no_phase_variance():
    mean, var = uniform_phase_averages(FringeParams(eps0=0.0), np.arange(1, 34), "O")
    assert np.all(var == 0)


def test_expansion_close_for_small_eps():
    fp = FringeParams(eps0=0.05)
    x = np.arange(1, 34)
    exact_mean, exact_var = uniform_phase_averages(fp, x)
    approx_mean, approx_var = expanded_phase_averages(fp, x)
    assert np.max(np.abs(exact_mean - approx_mean)) < 1e-6
    assert np.max(np.abs(exact_var - approx_var)) < 1e-6


def test_model_std_above_baseline_with_fluctuations():
    fp = FringeParams(eps0=0.13)
    x = np.arange(1, 34)
    model = model_std_curve(fp, 7700, 7700, x)
    baseline = baseline_std_curve(fp, 7700, x)
    assert np.all(model >= baseline)


# ─── Observed counts ─────────────────────────────────────────────────

def _run(run, counts):
    segments = []
    for setting, (n_o, n_h) in enumerate(counts, start=1):
        labels = np.array([O_LABEL] * n_o + [H_LABEL] * n_h, dtype=np.int8)
        segments.append(SettingSegment(setting, np.arange(1, labels.size + 1) + 1000 * setting, labels))
    return RunRecord(run, tuple(segments))


def test_count_table_and_moments():
    runs = [_run(1, [(2, 3), (4, 1)]), _run(2, [(4, 5), (6, 1)])]
    table = setting_count_table(runs)
    assert list(table.columns) == ["run", "setting", "count_o", "count_h"]
    assert len(table) == 4
    moments = observed_count_moments(table, "count_o")
    assert moments["mean"].tolist() == [3.0, 5.0]
    assert moments["variance"].tolist() == [2.0, 2.0]
    mean_n, var_n = total_count_model(table)
    assert mean_n == pytest.approx(6.5)
    assert var_n == pytest.approx(np.var([5, 5, 9, 7], ddof=1))


def test_total_count_model_needs_two_segments():
    with pytest.raises(ModelError):
        total_count_model(pd.DataFrame({"count_o": [1], "count_h": [2]}))


# ─── Poissonianity ───────────────────────────────────────────────────

def test_exponential_moment_ratios_agree(rng):
    ratios = moment_ratios(rng.exponential(1.3e-3, 1_000_000))
    assert ratios.max_relative_spread < 0.01
    assert not ratios.low_statistics


def test_non_exponential_moments_disagree():
    ratios = moment_ratios(np.full(5000, 1.0))
    assert ratios.max_relative_spread > 0.1


def test_low_statistics_flagged(caplog):
    ratios = moment_ratios(np.ones(10))
    assert ratios.low_statistics
    assert "below" in caplog.text


def test_dispersion_accepts_poisson(rng):
    assert poisson_dispersion_test(rng.poisson(7700, 1221)).p_value > 1e-4


def test_dispersion_rejects_overdispersion(rng):
    counts = rng.poisson(rng.uniform(5000, 10000, 500))
    result = poisson_dispersion_test(counts)
    assert result.index > 10
    assert result.p_value < 1e-6


def test_dispersion_needs_counts():
    with pytest.raises(ModelError):
        poisson_dispersion_test([5])
