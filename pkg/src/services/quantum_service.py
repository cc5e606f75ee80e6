"""Quantum model service — beam probabilities, count model, reflectivity, time-dependent phase."""

import math
from typing import Callable, Tuple

import numpy as np

from src.domain.models import BeamSplitterModel, FringeParams, OscillationParams
from src.exceptions import ModelError

VISIBILITY_GRID = 10_000


# ─── Ideal interferometer ────────────────────────────────────────────

def beam_probabilities(bs: BeamSplitterModel, chi) -> Tuple[np.ndarray, np.ndarray]:
    """(p_O, p_H) of the ideal three-plate interferometer at phase chi."""
    r = bs.reflectivity
    t = bs.transmissivity
    c = np.cos(chi)
    p_o = 2 * r * r * t * (1 + c)
    p_h = r * (t * t + r * r) * (1 - (2 * r * t / (t * t + r * r)) * c)
    return p_o, p_h


def h_fringe_prediction(reflectivity: float) -> float:
    """2RT / (T^2 + R^2), the H-beam fringe depth of the ideal model."""
    t = 1 - reflectivity
    return 2 * reflectivity * t / (t * t + reflectivity * reflectivity)


def visibility(p: Callable[[np.ndarray], np.ndarray], n: int = VISIBILITY_GRID) -> float:
    """(max - min) / (max + min) of p over a chi grid on [0, 2 pi)."""
    chi = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    values = np.asarray(p(chi), dtype=float)
    hi, lo = float(values.max()), float(values.min())
    if hi + lo == 0:
        raise ModelError("visibility undefined: max + min = 0")
    return (hi - lo) / (hi + lo)


def fringe_visibility(fp: FringeParams, beam: str = "O") -> float:
    """Closed form of visibility for A (1 + B cos): equals B."""
    return fp.b_o if beam == "O" else fp.b_h


# ─── Count model ─────────────────────────────────────────────────────

def count_model(fp: FringeParams, x) -> Tuple[np.ndarray, np.ndarray]:
    """(N_O, N_H) expected at setting(s) x."""
    x = np.asarray(x, dtype=float)
    n_o = fp.a_o * (1 + fp.b_o * np.cos(fp.omega_o * x + fp.chi_o))
    n_h = fp.a_h * (1 + fp.b_h * np.cos(fp.omega_h * x + fp.chi_h))
    return n_o, n_h


def fringe_phase(fp: FringeParams, x) -> np.ndarray:
    """Omega_O X + chi_O."""
    return fp.omega_o * np.asarray(x, dtype=float) + fp.chi_o


def relative_frequencies(fp: FringeParams, x, eps=0.0) -> Tuple[np.ndarray, np.ndarray]:
    """(P_O, P_H) at setting x, optionally shifted by a phase fluctuation eps."""
    if fp.h_depth > 1 + 1e-12:
        raise ModelError("b_o * a_o / a_h exceeds 1")
    c = np.cos(fringe_phase(fp, x) + eps)
    p_o = fp.o_fraction * (1 + fp.b_o * c)
    return p_o, 1 - p_o


def probability_from_phase(fp: FringeParams, phase) -> np.ndarray:
    """P~_O for a given total phase Omega~."""
    return fp.o_fraction * (1 + fp.b_o * np.cos(phase))


# ─── Reflectivity ────────────────────────────────────────────────────

def reflectivity_from_ratio(alpha: float) -> Tuple[float, float]:
    """Both roots of ((1-R)^2 + R^2) / (2R(1-R)) = alpha."""
    if not alpha >= 1:
        raise ModelError(f"alpha must be >= 1, got {alpha}")
    root = math.sqrt((alpha - 1) / (alpha + 1))
    return (1 + root) / 2, (1 - root) / 2


def ratio_from_reflectivity(reflectivity: float) -> float:
    if not 0 < reflectivity < 1:
        raise ModelError(f"reflectivity must lie in (0, 1), got {reflectivity}")
    t = 1 - reflectivity
    return (t * t + reflectivity * reflectivity) / (2 * reflectivity * t)


# ─── Time-dependent phase ────────────────────────────────────────────

def instantaneous_phase(fp: FringeParams, op: OscillationParams, x, t, eps=0.0) -> np.ndarray:
    """Omega_O X + chi_O + eps + Y sin(omega (t - t0))."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ModelError("time must be non-negative")
    return fringe_phase(fp, x) + eps + op.y * np.sin(op.omega * (t - op.t0))


def predicted_oscillation_amplitude(fp: FringeParams, op: OscillationParams, x, source: str):
    """Leading-order amplitude of the cos(omega dt) term of C_O, C_H, C_x (C_OH has none)."""
    phi = fringe_phase(fp, x)
    s, c = np.sin(phi), np.cos(phi)
    b = fp.b_o
    if source == "O":
        depth = b * op.y * s / (1 + b * c)
        return depth ** 2 / 2
    if source == "H":
        d = fp.h_depth
        depth = d * op.y * s / (1 - d * c)
        return depth ** 2 / 2
    if source == "x":
        a = fp.o_fraction
        mean_label = 1 - 2 * a * (1 + b * c)
        return 2 * (a * b * op.y * s) ** 2 / (1 - mean_label ** 2)
    if source == "OH":
        return np.zeros_like(phi)
    raise ModelError(f"unknown source {source!r}")


def beam_sum_identity(bs: BeamSplitterModel, chi) -> np.ndarray:
    """p_O + p_H, equal to R for every chi (the rest leaves through BS1/BS2)."""
    p_o, p_h = beam_probabilities(bs, chi)
    return p_o + p_h
