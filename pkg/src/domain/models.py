"""Domain types: event data, model parameters, fit and analysis results."""

import math
from dataclasses import dataclass, field
from typing import Iterator, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.config import (
    SIMULATION_DES,
    SIMULATION_OSCILLATION,
    SIMULATION_FRINGE,
    TICK_SECONDS,
)

O_LABEL = -1
H_LABEL = 1

Source = Literal["O", "H", "OH", "x"]
SOURCES: Tuple[str, ...] = ("O", "H", "OH", "x")


# ─── Event data ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class TimeStamp:
    """Signed clock tick. Negative while the phase shifter moves."""

    ticks: int

    def __post_init__(self):
        if self.ticks == 0:
            raise ValueError("time stamp 0 is not allowed")

    @property
    def moving(self) -> bool:
        return self.ticks < 0

    @property
    def seconds(self) -> float:
        return abs(self.ticks) * TICK_SECONDS


@dataclass(frozen=True)
class DetectionEvent:
    time: TimeStamp
    label: int

    def __post_init__(self):
        if self.label not in (O_LABEL, H_LABEL):
            raise ValueError(f"label must be -1 (O) or +1 (H), got {self.label}")


@dataclass(frozen=True, eq=False)
class MergedStream:
    """Both detector streams merged on |ticks|, collisions removed."""

    ticks: np.ndarray  # signed int64
    labels: np.ndarray  # int8, -1 = O, +1 = H
    discarded: int = 0

    def __len__(self) -> int:
        return int(self.ticks.size)

    def events(self) -> Iterator[DetectionEvent]:
        for tick, label in zip(self.ticks.tolist(), self.labels.tolist()):
            yield DetectionEvent(TimeStamp(tick), label)


@dataclass(frozen=True, eq=False)
class SettingSegment:
    """Stationary events recorded at one phase-shifter setting."""

    setting: int
    ticks: np.ndarray  # positive, strictly increasing
    labels: np.ndarray
    dwell: float = 10.0

    def __post_init__(self):
        if self.ticks.size and (self.ticks[0] <= 0 or np.any(np.diff(self.ticks) <= 0)):
            raise ValueError(f"segment X={self.setting}: stamps must be positive and increasing")

    def __len__(self) -> int:
        return int(self.ticks.size)

    @property
    def count_o(self) -> int:
        return int(np.count_nonzero(self.labels == O_LABEL))

    @property
    def count_h(self) -> int:
        return int(np.count_nonzero(self.labels == H_LABEL))

    @property
    def duration(self) -> float:
        """Span between first and last event in seconds."""
        if self.ticks.size < 2:
            return 0.0
        return float(self.ticks[-1] - self.ticks[0]) * TICK_SECONDS


@dataclass(frozen=True, eq=False)
class RunRecord:
    run: int
    segments: Tuple[SettingSegment, ...]
    discarded_collisions: int = 0
    moving_events: int = 0
    start_seconds: float = 0.0

    def __post_init__(self):
        settings = [s.setting for s in self.segments]
        if settings != list(range(1, len(settings) + 1)):
            raise ValueError(f"run {self.run}: segments must cover X = 1..{len(settings)} once each")
        if self.discarded_collisions < 0 or self.discarded_collisions % 2:
            raise ValueError(f"run {self.run}: discarded events must come in pairs")

    def segment(self, setting: int) -> SettingSegment:
        return self.segments[setting - 1]

    @property
    def stationary_events(self) -> int:
        return sum(len(s) for s in self.segments)


# ─── Model parameters ────────────────────────────────────────────────

class BeamSplitterModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    reflectivity: float = SIMULATION_DES["reflectivity"]

    @field_validator("reflectivity")
    @classmethod
    def _check_r(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError(f"reflectivity must lie in (0, 1), got {v}")
        return v

    @property
    def transmissivity(self) -> float:
        return 1.0 - self.reflectivity


class FringeParams(BaseModel):
    """Sinusoidal count model of both beams plus the phase-fluctuation half-width."""

    model_config = ConfigDict(frozen=True)

    a_o: float = SIMULATION_FRINGE["a_o"]
    a_h: float = SIMULATION_FRINGE["a_h"]
    b_o: float = SIMULATION_FRINGE["b_o"]
    b_h: float = SIMULATION_FRINGE["b_h"]
    omega_o: float = SIMULATION_FRINGE["omega_o"]
    omega_h: float = SIMULATION_FRINGE["omega_h"]
    chi_o: float = SIMULATION_FRINGE["chi_o"]
    chi_h: float = SIMULATION_FRINGE["chi_h"]
    eps0: float = SIMULATION_FRINGE["eps0"]

    @model_validator(mode="after")
    def _check_invariants(self) -> "FringeParams":
        if self.a_o <= 0 or self.a_h <= 0:
            raise ValueError("a_o and a_h must be positive")
        if not 0.0 <= self.b_o <= 1.0:
            raise ValueError(f"b_o must lie in [0, 1], got {self.b_o}")
        if not 0.0 <= self.b_h <= 1.0:
            raise ValueError(f"b_h must lie in [0, 1], got {self.b_h}")
        if self.b_o * self.a_o / self.a_h > 1.0 + 1e-12:
            raise ValueError("b_o * a_o / a_h exceeds 1, H probability would turn negative")
        if self.eps0 < 0:
            raise ValueError(f"eps0 must be non-negative, got {self.eps0}")
        return self

    @property
    def o_fraction(self) -> float:
        """A_O / (A_O + A_H)."""
        return self.a_o / (self.a_o + self.a_h)

    @property
    def h_depth(self) -> float:
        """Fringe depth of the H relative frequency, B_O A_O / A_H."""
        return self.b_o * self.a_o / self.a_h


class OscillationParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    y: float = SIMULATION_OSCILLATION["y"]
    omega: float = SIMULATION_OSCILLATION["omega"]
    t0: float = SIMULATION_OSCILLATION["t0"]

    @model_validator(mode="after")
    def _check_invariants(self) -> "OscillationParams":
        if self.y < 0:
            raise ValueError(f"y must be non-negative, got {self.y}")
        if self.omega <= 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        return self

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega


class ProtocolConfig(BaseModel):
    """One synthetic experiment: protocol timing, generator model and its parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_runs: int = Field(default=37, ge=1)
    n_settings: int = Field(default=33, ge=1)
    dwell: float = Field(default=10.0, gt=0)
    move_duration: float = Field(default=8.43, gt=0)
    arrival_rate: float = Field(default=1 / 1.3e-3, gt=0)
    seed: int = Field(default=0, ge=0)
    model: Literal["collapse", "des"] = "collapse"
    epsilon_mode: Literal["event", "segment"] = "event"
    randomize_t0: bool = False
    phase_drift_per_run: float = 0.0
    fp: FringeParams = Field(default_factory=FringeParams)
    op: OscillationParams = Field(default_factory=OscillationParams)
    bs: BeamSplitterModel = Field(default_factory=BeamSplitterModel)
    gamma: float = Field(default=SIMULATION_DES["gamma"], gt=0, le=1)

    @field_validator("model", "epsilon_mode", mode="before")
    @classmethod
    def _lower(cls, v):
        return v.lower() if isinstance(v, str) else v

    @property
    def run_duration(self) -> float:
        """One reset move plus n_settings dwells and the moves between them."""
        return self.n_settings * (self.dwell + self.move_duration)

    @property
    def total_duration(self) -> float:
        return self.n_runs * self.run_duration


class JobSpec(BaseModel):
    """A parsed CLI invocation."""

    model_config = ConfigDict(frozen=True)

    subcommand: Literal["simulate", "analyze", "fit", "correlate", "roundtrip"]
    inputs: Optional[str] = None
    output_dir: str = "out"
    config_path: Optional[str] = None
    seed: Optional[int] = None
    jobs: int = 0
    filter: Optional[Source] = None
    bin_width: float = Field(default=0.01, gt=0)
    window: Optional[str] = None
    verbose: bool = False


# ─── Statistics ──────────────────────────────────────────────────────

class CountMoments(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: float
    variance: float = Field(ge=0)
    n_runs: int = Field(default=1, ge=1)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


class FluctuationModel(BaseModel):
    """Run-size and detection-probability moments entering the compound variance."""

    model_config = ConfigDict(frozen=True)

    mean_n: float = Field(ge=0)
    var_n: float = Field(ge=0)
    mean_p: float = Field(ge=0, le=1)
    var_p: float = Field(ge=0)

    @model_validator(mode="after")
    def _check_var_p(self) -> "FluctuationModel":
        if self.var_p > self.mean_p * (1 - self.mean_p) + 1e-15:
            raise ValueError("var_p exceeds mean_p * (1 - mean_p)")
        return self


@dataclass(frozen=True)
class MomentRatios:
    """m1, (m2/2)^(1/2), (m3/6)^(1/3) of the time differences."""

    m1: float
    m2_root: float
    m3_root: float
    n_samples: int
    low_statistics: bool = False

    @property
    def max_relative_spread(self) -> float:
        values = (self.m1, self.m2_root, self.m3_root)
        return (max(values) - min(values)) / self.m1


@dataclass(frozen=True)
class DispersionTest:
    index: float  # variance / mean
    statistic: float
    dof: int
    p_value: float


# ─── Fits ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SinusoidFit:
    """A (1 + B cos(Omega X + chi)) for one beam."""

    a: float
    b: float
    omega: float
    chi: float
    residual_rms: float
    converged: bool = True
    degenerate: bool = False

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.a * (1 + self.b * np.cos(self.omega * x + self.chi))


@dataclass(frozen=True)
class DampedCosineFit:
    """a exp(-b dt) cos(2 pi dt / T)."""

    a: float
    b: float
    period: float
    residual_rms: float
    detected: bool = True
    false_alarm: float = 0.0
    converged: bool = True

    def evaluate(self, dt) -> np.ndarray:
        dt = np.asarray(dt, dtype=float)
        return self.a * np.exp(-self.b * dt) * np.cos(2 * np.pi * dt / self.period)


@dataclass(frozen=True)
class VarianceFit:
    eps0: float
    residual_rms: float
    converged: bool = True


@dataclass(frozen=True)
class PhaseDriftRow:
    run: int
    start_seconds: float
    chi_o: float
    chi_h: float
    delta: float  # (chi_h - chi_o) mod 2 pi
    total_counts: int


# ─── Correlation ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class LaggedStats:
    """Leading/trailing window moments of a series at lag k."""

    mean0: float
    mean_k: float
    var0: float
    var_k: float
    cross: float
    n: int

    @property
    def correlation(self) -> float:
        return (self.cross - self.mean0 * self.mean_k) / math.sqrt(self.var0 * self.var_k)


@dataclass(frozen=True, eq=False)
class CorrelationCurve:
    """Binned C(dt). Invalid bins carry value 0 and valid=False."""

    source: str
    setting: int
    bin_width: float
    centers: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    valid: np.ndarray
    series_length: float = 0.0  # mean per-run series length M

    def __post_init__(self):
        if np.any(np.abs(self.values) > 1.0):
            raise ValueError("correlation values must lie in [-1, 1]")

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))

    def valid_points(self, max_dt: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
        mask = self.valid.copy()
        if max_dt is not None:
            mask &= self.centers <= max_dt
        return self.centers[mask], self.values[mask]


# ─── DES network state ───────────────────────────────────────────────

@dataclass(frozen=True)
class AdaptiveSplitterState:
    """Port occupancy x and per-port message registers y of one beam splitter."""

    x: Tuple[float, float] = (1.0, 0.0)
    y: Tuple[complex, complex] = (1 + 0j, 1 + 0j)

    def __post_init__(self):
        if min(self.x) < -1e-12 or abs(sum(self.x) - 1.0) > 1e-9:
            raise ValueError(f"occupancy must be a probability vector, got {self.x}")
        if max(abs(v) for v in self.y) > 1.0 + 1e-9:
            raise ValueError("message registers must stay inside the unit disc")


@dataclass(frozen=True)
class NetworkState:
    """BS0 splits, BS1/BS2 reflect onto the two paths, BS3 recombines."""

    splitters: Tuple[AdaptiveSplitterState, ...] = field(
        default_factory=lambda: tuple(AdaptiveSplitterState() for _ in range(4))
    )

    def __post_init__(self):
        if len(self.splitters) != 4:
            raise ValueError("network has exactly four beam splitters")

    def replace(self, index: int, state: AdaptiveSplitterState) -> "NetworkState":
        splitters = list(self.splitters)
        splitters[index] = state
        return NetworkState(tuple(splitters))


# ─── Acceptance ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class CriterionResult:
    name: str
    passed: bool
    status: str  # pass | fail | null confirmed | skipped
    detail: dict = field(default_factory=dict)
