import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.domain.models import BeamSplitterModel, FringeParams, OscillationParams
from src.exceptions import ModelError
from src.services.quantum_service import (
    beam_probabilities,
    beam_sum_identity,
    count_model,
    fringe_visibility,
    h_fringe_prediction,
    instantaneous_phase,
    predicted_oscillation_amplitude,
    ratio_from_reflectivity,
    reflectivity_from_ratio,
    relative_frequencies,
    visibility,
)


# ─── Reflectivity ────────────────────────────────────────────────────

def test_reflectivity_from_measured_ratio():
    r_high, r_low = reflectivity_from_ratio(1.78)
    assert r_high == pytest.approx(0.76, abs=0.01)
    assert r_low == pytest.approx(0.24, abs=0.01)


def test_ratio_one_gives_half():
    assert reflectivity_from_ratio(1.0) == (0.5, 0.5)


def test_ratio_below_one_rejected():
    with pytest.raises(ModelError):
        reflectivity_from_ratio(0.9)


@given(st.floats(0.01, 0.99))
def test_ratio_inverts(r):
    roots = reflectivity_from_ratio(ratio_from_reflectivity(r))
    assert min(abs(roots[0] - r), abs(roots[1] - r)) < 1e-9
    assert roots[0] + roots[1] == pytest.approx(1.0)


# ─── Ideal interferometer ────────────────────────────────────────────

@given(st.floats(0.01, 0.99), st.floats(-10, 10))
def test_detected_fraction_is_reflectivity(r, chi):
    assert beam_sum_identity(BeamSplitterModel(reflectivity=r), chi) == pytest.approx(r)


def test_o_beam_full_visibility():
    bs = BeamSplitterModel(reflectivity=0.24)
    assert visibility(lambda chi: beam_probabilities(bs, chi)[0]) == pytest.approx(1.0)


def test_h_beam_visibility_matches_prediction():
    bs = BeamSplitterModel(reflectivity=0.24)
    v = visibility(lambda chi: beam_probabilities(bs, chi)[1])
    assert v == pytest.approx(h_fringe_prediction(0.24), rel=1e-6)


def test_visibility_undefined():
    with pytest.raises(ModelError):
        visibility(lambda chi: np.zeros_like(chi))


def test_reflectivity_bounds():
    with pytest.raises(ValueError):
        BeamSplitterModel(reflectivity=1.0)


# ─── Count model ─────────────────────────────────────────────────────

def test_closed_form_visibility_matches_grid(fringe):
    grid = visibility(lambda chi: fringe.a_o * (1 + fringe.b_o * np.cos(chi)))
    assert fringe_visibility(fringe, "O") == pytest.approx(grid, rel=1e-6)


def test_count_model_extrema():
    fp = FringeParams(a_o=2780, a_h=4950, b_o=0.74, b_h=0.42, chi_o=0.0, chi_h=math.pi, eps0=0.0)
    n_o, n_h = count_model(fp, 0.0)
    assert n_o == pytest.approx(2780 * 1.74)
    assert n_h == pytest.approx(4950 * 0.58)


@given(st.integers(1, 33), st.floats(-0.5, 0.5))
def test_relative_frequencies_sum_to_one(x, eps):
    p_o, p_h = relative_frequencies(FringeParams(), x, eps)
    assert p_o + p_h == pytest.approx(1.0)
    assert 0.0 <= p_o <= 1.0


def test_h_probability_cannot_turn_negative():
    with pytest.raises(ValueError):
        FringeParams(a_o=5000, a_h=1000, b_o=0.9, b_h=0.1)


@pytest.mark.parametrize("b_h", [-0.1, 1.2])
def test_h_fringe_depth_bounded(b_h):
    with pytest.raises(ValueError, match="b_h"):
        FringeParams(b_h=b_h)


# ─── Time-dependent phase ────────────────────────────────────────────

def test_instantaneous_phase_reduces_to_static():
    fp = FringeParams()
    op = OscillationParams(y=0.0)
    assert instantaneous_phase(fp, op, 5, 3.3) == pytest.approx(fp.omega_o * 5 + fp.chi_o)


def test_instantaneous_phase_quarter_period():
    fp = FringeParams()
    op = OscillationParams(y=0.2, omega=2 * math.pi / 2.8, t0=0.0)
    assert instantaneous_phase(fp, op, 1, 0.7) == pytest.approx(fp.omega_o + fp.chi_o + 0.2)


@given(
    st.floats(0.0, 1.0),
    st.floats(0.5, 10.0),
    st.floats(0.0, 5.0),
    st.integers(1, 33),
    st.floats(0.0, 50.0),
)
def test_instantaneous_phase_is_periodic(y, omega, t0, x, t):
    fp = FringeParams()
    op = OscillationParams(y=y, omega=omega, t0=t0)
    shifted = instantaneous_phase(fp, op, x, t + op.period)
    assert shifted == pytest.approx(instantaneous_phase(fp, op, x, t), abs=1e-12)


def test_negative_time_rejected():
    with pytest.raises(ModelError):
        instantaneous_phase(FringeParams(), OscillationParams(), 1, -0.1)


def test_predicted_amplitudes():
    fp = FringeParams(chi_o=0.0, chi_h=math.pi)
    op = OscillationParams(y=0.2)
    x_zero = 0.0  # sin(phase) = 0
    x_quarter = (math.pi / 2) / fp.omega_o
    assert predicted_oscillation_amplitude(fp, op, x_zero, "O") == pytest.approx(0.0)
    assert predicted_oscillation_amplitude(fp, op, x_quarter, "O") == pytest.approx((fp.b_o * 0.2) ** 2 / 2)
    assert predicted_oscillation_amplitude(fp, op, x_quarter, "OH") == 0.0
    o = predicted_oscillation_amplitude(fp, op, x_quarter, "O")
    h = predicted_oscillation_amplitude(fp, op, x_quarter, "H")
    assert o > h
    with pytest.raises(ModelError):
        predicted_oscillation_amplitude(fp, op, 1, "Q")
