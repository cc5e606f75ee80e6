import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.domain.models import (
    H_LABEL,
    O_LABEL,
    AdaptiveSplitterState,
    BeamSplitterModel,
    FringeParams,
    NetworkState,
)
from src.exceptions import ModelError
from src.services.des_service import (
    LOST,
    AdaptiveNetwork,
    des_process_neutron,
    des_visibility,
    port1_probability,
    update_splitter,
)
from src.services.quantum_service import fringe_phase, relative_frequencies
from src.services.simulator_service import des_equivalent_fringe

BS = BeamSplitterModel(reflectivity=0.24)


# ─── Single splitter ─────────────────────────────────────────────────

@settings(max_examples=50)
@given(
    gamma=st.floats(0.01, 1.0),
    ports=st.lists(st.integers(0, 1), min_size=1, max_size=60),
    angle=st.floats(-np.pi, np.pi),
)
def test_occupancy_stays_normalized(gamma, ports, angle):
    state = AdaptiveSplitterState()
    message = complex(np.cos(angle), np.sin(angle))
    for port in ports:
        state = update_splitter(state, port, message, gamma)
    assert sum(state.x) == pytest.approx(1.0, abs=1e-9)
    assert min(state.x) >= -1e-12
    assert max(abs(v) for v in state.y) <= 1.0 + 1e-9


def test_cold_splitter_reflects_with_r():
    assert port1_probability(AdaptiveSplitterState(), 0.24) == pytest.approx(0.24)


def test_wrong_entry_port(rng):
    with pytest.raises(ModelError):
        des_process_neutron(NetworkState(), 1, 0.0, rng, BS, 0.6)


def test_frozen_network_warns(caplog, rng):
    with caplog.at_level(logging.WARNING):
        net = AdaptiveNetwork(BS, 1.0)
    assert "gamma = 1" in caplog.text
    net.process_batch(np.zeros(500), rng)
    assert net.state.splitters[3] == AdaptiveSplitterState()


# ─── Batch against sequential ────────────────────────────────────────

def test_batch_matches_sequential():
    phases = np.random.default_rng(3).uniform(0, 2 * np.pi, 2000)
    rng = np.random.default_rng(99)
    state = NetworkState()
    expected = []
    for phase in phases:
        label, state = des_process_neutron(state, 0, float(phase), rng, BS, 0.6)
        expected.append(label)

    net = AdaptiveNetwork(BS, 0.6)
    labels = net.process_batch(phases, np.random.default_rng(99))
    assert labels.tolist() == expected
    assert net.state.splitters[3].x == pytest.approx(state.splitters[3].x, abs=1e-9)


def test_batch_continues_across_calls():
    phases = np.linspace(0, 6, 3000)
    whole = AdaptiveNetwork(BS, 0.6).process_batch(phases, np.random.default_rng(5))
    rng = np.random.default_rng(5)
    net = AdaptiveNetwork(BS, 0.6)
    parts = np.concatenate([net.process_batch(phases[:1234], rng), net.process_batch(phases[1234:], rng)])
    assert np.array_equal(whole, parts)


# ─── Stationary behaviour ────────────────────────────────────────────

@pytest.mark.parametrize("phase", [0.0, 1.3, np.pi])
def test_stationary_o_frequency(phase):
    labels = AdaptiveNetwork(BS, 0.6).process_batch(np.full(200_000, phase), np.random.default_rng(1))
    detected = labels[labels != LOST]
    assert np.mean(labels != LOST) == pytest.approx(0.24, abs=0.005)
    freq = np.mean(detected == O_LABEL)
    two_rt = 2 * 0.24 * 0.76
    assert freq == pytest.approx(two_rt * (1 + des_visibility(BS, 0.6) * np.cos(phase)), abs=0.01)
    assert set(np.unique(labels)) <= {O_LABEL, H_LABEL, LOST}


def test_visibility_limits():
    assert des_visibility(BS, 1.0) == 1.0
    assert des_visibility(BS, 0.99) > 0.98
    assert 0.5 < des_visibility(BS, 0.6) < 1.0


@pytest.mark.parametrize("gamma", [0.6, 0.99])
def test_frequencies_match_equivalent_collapse_model(gamma):
    fp = FringeParams()
    equivalent = des_equivalent_fringe(BS, gamma, fp)
    rng = np.random.default_rng(17)
    z = []
    for x in range(1, 34):
        labels = AdaptiveNetwork(BS, gamma).process_batch(np.full(150_000, float(fringe_phase(fp, x))), rng)
        hits = (labels[labels != LOST] == O_LABEL)[2000:]
        # batch means absorb the correlation the splitter memory introduces
        means = np.array([b.mean() for b in np.array_split(hits, 50)])
        se = means.std(ddof=1) / np.sqrt(means.size)
        p_o, _ = relative_frequencies(equivalent, x)
        z.append((hits.mean() - float(p_o)) / se)
    z = np.abs(z)
    assert z.max() < 4.0
    assert np.count_nonzero(z > 3.0) <= 1
