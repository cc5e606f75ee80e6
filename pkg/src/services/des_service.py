"""DES service — particle-only interferometer built from adaptive beam splitters.

Every splitter keeps a port-occupancy vector x and one complex message
register per input port. A neutron arriving on port k with message m
updates x <- g x + (1-g) e_k and Y_k <- g Y_k + (1-g) m, then leaves on
port 1 with probability |w_1|^2 / |w|^2, w = U (sqrt(x_0) Y_0, sqrt(x_1) Y_1).

Topology: BS0 splits the incoming neutron onto path I (port 0) or path II
(port 1). BS1 (path I) and BS2 (path II) send it on to BS3 when they
reflect, otherwise it is lost. Path I carries the phase-shifter phase plus
pi and enters BS3 on port 0, path II enters on port 1. BS3 port 1 feeds the
O detector, port 0 the H detector.
"""

import math
from typing import Optional, Tuple

import numpy as np
from scipy.signal import lfilter

from src.domain.models import (
    H_LABEL,
    O_LABEL,
    AdaptiveSplitterState,
    BeamSplitterModel,
    NetworkState,
)
from src.exceptions import ModelError
from src.utils.logger import logger

LOST = 0
PATH_I_PHASE = math.pi
_CHAIN_LENGTH = 400_000
_CHAIN_BURN_IN = 1_000


# ─── Single splitter ─────────────────────────────────────────────────

def update_splitter(
    state: AdaptiveSplitterState, port: int, message: complex, gamma: float
) -> AdaptiveSplitterState:
    """Deterministic state update for a neutron arriving on `port`."""
    e = (1.0, 0.0) if port == 0 else (0.0, 1.0)
    x = (gamma * state.x[0] + (1 - gamma) * e[0], gamma * state.x[1] + (1 - gamma) * e[1])
    y = list(state.y)
    y[port] = gamma * y[port] + (1 - gamma) * message
    return AdaptiveSplitterState(x=x, y=(y[0], y[1]))


def port1_probability(state: AdaptiveSplitterState, reflectivity: float) -> float:
    """Probability of leaving on output port 1 given the internal state."""
    r = math.sqrt(reflectivity)
    t = math.sqrt(1 - reflectivity)
    u0 = math.sqrt(state.x[0]) * state.y[0]
    u1 = math.sqrt(state.x[1]) * state.y[1]
    w0 = t * u0 + r * u1
    w1 = -r * u0 + t * u1
    p0, p1 = abs(w0) ** 2, abs(w1) ** 2
    total = p0 + p1
    return p1 / total if total > 0 else reflectivity


def route(
    state: AdaptiveSplitterState, port: int, message: complex, u: float, bs: BeamSplitterModel, gamma: float
) -> Tuple[int, AdaptiveSplitterState]:
    """Update, then emit on port 1 when u < P(port 1)."""
    new_state = update_splitter(state, port, message, gamma)
    return (1 if u < port1_probability(new_state, bs.reflectivity) else 0), new_state


# ─── One neutron through the network ─────────────────────────────────

def des_process_neutron(
    state: NetworkState,
    entry_port: int,
    phase: float,
    rng: np.random.Generator,
    bs: BeamSplitterModel,
    gamma: float,
) -> Tuple[int, NetworkState]:
    """(label, new state); label is -1 (O), +1 (H) or 0 when the neutron leaves at BS1/BS2.

    Draws exactly three uniforms per neutron: BS0, BS1-or-BS2, BS3.
    """
    if entry_port != 0:
        raise ModelError(f"invalid entry path {entry_port}: neutrons enter BS0 on port 0")
    u = rng.random(3)

    out0, s0 = route(state.splitters[0], 0, 1 + 0j, u[0], bs, gamma)
    state = state.replace(0, s0)

    if out0 == 0:
        out1, s1 = route(state.splitters[1], 0, 1 + 0j, u[1], bs, gamma)
        state = state.replace(1, s1)
        if out1 == 0:
            return LOST, state
        port, message = 0, complex(math.cos(phase + PATH_I_PHASE), math.sin(phase + PATH_I_PHASE))
    else:
        out2, s2 = route(state.splitters[2], 0, 1 + 0j, u[1], bs, gamma)
        state = state.replace(2, s2)
        if out2 == 0:
            return LOST, state
        port, message = 1, 1 + 0j

    out3, s3 = route(state.splitters[3], port, message, u[2], bs, gamma)
    return (O_LABEL if out3 == 1 else H_LABEL), state.replace(3, s3)


# ─── Many neutrons at once ───────────────────────────────────────────

def _register_track(
    arrivals: np.ndarray, port: int, messages: np.ndarray, init: complex, gamma: float
) -> np.ndarray:
    """Value of register Y_port seen by every BS3 arrival, after its own update."""
    on_port = arrivals == port
    sub = messages[on_port]
    filtered = lfilter([1 - gamma], [1, -gamma], sub, zi=np.array([gamma * init], dtype=complex))[0] \
        if sub.size else np.empty(0, dtype=complex)
    seen = np.cumsum(on_port)
    return np.concatenate([[init], filtered])[seen]


class AdaptiveNetwork:
    """Vectorized DES: identical labels to repeated des_process_neutron with the same draws.

    BS0-BS2 only ever see port 0, so their output probabilities stay fixed;
    BS3's update does not depend on its own output, so its state sequence
    is a linear recursion solved by lfilter.
    """

    def __init__(self, bs: BeamSplitterModel, gamma: float, state: Optional[NetworkState] = None):
        if gamma == 1:
            logger.warning("gamma = 1 freezes the beam-splitter state; the network will not adapt")
        self.bs = bs
        self.gamma = gamma
        self.state = state or NetworkState()

    def process_batch(self, phases: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Labels (-1, +1, or 0 for lost) of neutrons with the given phase-shifter phases."""
        phases = np.asarray(phases, dtype=float)
        n = phases.size
        if n == 0:
            return np.empty(0, dtype=np.int8)
        g = self.gamma
        u = rng.random((n, 3))

        s0 = update_splitter(self.state.splitters[0], 0, 1 + 0j, g)
        s1 = update_splitter(self.state.splitters[1], 0, 1 + 0j, g)
        s2 = update_splitter(self.state.splitters[2], 0, 1 + 0j, g)
        for s in (s0, s1, s2):
            if s.x[1] != 0.0:
                raise ModelError("batch routing requires BS0-BS2 to have seen port 0 only")
        p0 = port1_probability(s0, self.bs.reflectivity)
        p1 = port1_probability(s1, self.bs.reflectivity)
        p2 = port1_probability(s2, self.bs.reflectivity)

        path_two = u[:, 0] < p0
        reflected = np.where(path_two, u[:, 1] < p2, u[:, 1] < p1)
        labels = np.zeros(n, dtype=np.int8)
        arrived = np.flatnonzero(reflected)
        if arrived.size == 0:
            self.state = NetworkState((s0, s1, s2, self.state.splitters[3]))
            return labels

        ports = path_two[arrived].astype(np.int8)  # path II enters BS3 on port 1
        messages = np.where(ports == 0, np.exp(1j * (phases[arrived] + PATH_I_PHASE)), 1 + 0j)

        bs3 = self.state.splitters[3]
        x0 = lfilter([1 - g], [1, -g], (ports == 0).astype(float), zi=[g * bs3.x[0]])[0]
        x1 = lfilter([1 - g], [1, -g], (ports == 1).astype(float), zi=[g * bs3.x[1]])[0]
        y0 = _register_track(ports, 0, messages, bs3.y[0], g)
        y1 = _register_track(ports, 1, messages, bs3.y[1], g)

        r = math.sqrt(self.bs.reflectivity)
        t = math.sqrt(self.bs.transmissivity)
        a0 = np.sqrt(np.maximum(x0, 0.0)) * y0
        a1 = np.sqrt(np.maximum(x1, 0.0)) * y1
        w0 = t * a0 + r * a1
        w1 = -r * a0 + t * a1
        q0, q1 = np.abs(w0) ** 2, np.abs(w1) ** 2
        total = q0 + q1
        prob = np.where(total > 0, q1 / np.where(total > 0, total, 1.0), self.bs.reflectivity)

        labels[arrived] = np.where(u[arrived, 2] < prob, O_LABEL, H_LABEL)
        x_end = (float(x0[-1]), float(x1[-1]))
        norm = x_end[0] + x_end[1]
        bs3_end = AdaptiveSplitterState(x=(x_end[0] / norm, x_end[1] / norm), y=(complex(y0[-1]), complex(y1[-1])))
        self.state = NetworkState((s0, s1, s2, bs3_end))
        return labels


# ─── Stationary visibility ───────────────────────────────────────────

def des_visibility(bs: BeamSplitterModel, gamma: float, n: int = _CHAIN_LENGTH, seed: int = 0) -> float:
    """E[sqrt(x0 x1)] / sqrt(RT) of BS3's occupancy chain: the DES fringe depth."""
    r, t = bs.reflectivity, bs.transmissivity
    if gamma >= 1:
        return 1.0
    rng = np.random.default_rng(seed)
    path_one = (rng.random(n) < t).astype(float)
    x0 = lfilter([1 - gamma], [1, -gamma], path_one, zi=[gamma * t])[0][_CHAIN_BURN_IN:]
    return float(np.mean(np.sqrt(np.clip(x0 * (1 - x0), 0.0, None))) / math.sqrt(r * t))
