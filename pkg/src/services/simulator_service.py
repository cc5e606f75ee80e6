"""Simulator service — synthetic experiments in the stamp-file protocol.

Each run is a reset move followed by n_settings dwells separated by moves.
Neutrons arrive as a Poisson process in every window; the collapse model
labels them with the instantaneous probability P~_O, the DES model routes
them through the adaptive beam-splitter network.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import j0

from src.config import TICK_SECONDS
from src.domain.models import (
    H_LABEL,
    O_LABEL,
    BeamSplitterModel,
    FringeParams,
    OscillationParams,
    ProtocolConfig,
)
from src.exceptions import ModelError, StorageError
from src.services.des_service import AdaptiveNetwork, des_visibility
from src.services.quantum_service import instantaneous_phase, probability_from_phase
from src.services.statistics_service import sinc
from src.storage.repository import write_manifest, write_stamp_array
from src.utils.logger import logger

PathLike = Union[str, Path]

# one independent stream per (run, purpose)
STREAMS = {"arrivals": 0, "labels": 1, "epsilon": 2, "t0": 3}


def stream(seed: int, run: int, purpose: str) -> np.random.Generator:
    """Counter-based Philox generator keyed by (seed, run, purpose)."""
    ss = np.random.SeedSequence(seed, spawn_key=(run, STREAMS[purpose]))
    return np.random.Generator(np.random.Philox(ss))


# ─── Event generators ────────────────────────────────────────────────

def generate_arrivals(rate: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson arrival times in [0, duration) from cumulated exponential gaps."""
    if rate <= 0 or duration < 0:
        raise ModelError(f"arrivals need rate > 0 and duration >= 0, got {rate}, {duration}")
    if duration == 0:
        return np.empty(0)
    expected = rate * duration
    chunk = int(expected + 5 * math.sqrt(expected) + 16)
    parts = []
    last = 0.0
    while True:
        times = last + np.cumsum(rng.exponential(1 / rate, chunk))
        if times[-1] >= duration:
            parts.append(times[times < duration])
            break
        parts.append(times)
        last = float(times[-1])
    return np.concatenate(parts)


def collapse_labels(phases: np.ndarray, fp: FringeParams, rng: np.random.Generator) -> np.ndarray:
    """One label per neutron: O with probability P~_O(phase), H otherwise."""
    p_o = probability_from_phase(fp, phases)
    return np.where(rng.random(np.shape(phases)) < p_o, O_LABEL, H_LABEL).astype(np.int8)


def collapse_event(
    t: float,
    x: float,
    fp: FringeParams,
    op: OscillationParams,
    rng: np.random.Generator,
    eps: Optional[float] = None,
) -> int:
    """Label of a single neutron at time t and setting x; eps ~ U[-eps0, eps0] unless given."""
    if eps is None:
        eps = rng.uniform(-fp.eps0, fp.eps0) if fp.eps0 > 0 else 0.0
    phase = instantaneous_phase(fp, op, x, t, eps)
    return O_LABEL if rng.random() < float(probability_from_phase(fp, phase)) else H_LABEL


# ─── Protocol layout ─────────────────────────────────────────────────

@dataclass(frozen=True)
class Window:
    start_tick: int
    n_ticks: int
    setting: int
    setting_from: float
    moving: bool

    @property
    def seconds(self) -> float:
        return self.n_ticks * TICK_SECONDS

    @property
    def end_tick(self) -> int:
        """Last tick inside the window."""
        return self.start_tick + self.n_ticks - 1


def window_ticks(cfg: ProtocolConfig) -> Tuple[int, int]:
    dwell = int(round(cfg.dwell / TICK_SECONDS))
    move = int(round(cfg.move_duration / TICK_SECONDS))
    if dwell < 1 or move < 1:
        raise ModelError("dwell and move windows must span at least one tick")
    return dwell, move


def protocol_windows(cfg: ProtocolConfig, run: int) -> List[Window]:
    """Move/dwell windows of run `run` (1-based); the clock runs on across runs."""
    dwell, move = window_ticks(cfg)
    start = 1 + (run - 1) * cfg.n_settings * (dwell + move)
    windows = []
    for setting in range(1, cfg.n_settings + 1):
        previous = cfg.n_settings if setting == 1 else setting - 1
        windows.append(Window(start, move, setting, float(previous), True))
        start += move
        windows.append(Window(start, dwell, setting, float(setting), False))
        start += dwell
    return windows


def bump_ticks(q: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Make sorted ticks strictly increasing inside [start, stop) by moving clashes to free ticks."""
    n = q.size
    if n == 0:
        return q
    if n > stop - start:
        raise ModelError(f"{n} events do not fit into {stop - start} ticks")
    idx = np.arange(n)
    v = np.maximum.accumulate(q - idx)
    v = np.minimum(v, stop - n)
    return v + idx


# ─── One run ─────────────────────────────────────────────────────────

@dataclass
class SimulatedRun:
    run: int
    o_ticks: np.ndarray
    h_ticks: np.ndarray
    entries: List[Tuple[str, object]] = field(default_factory=list)
    incident: int = 0
    bumped: int = 0
    collisions: int = 0

    @property
    def stationary_events(self) -> int:
        return int(np.count_nonzero(self.o_ticks > 0) + np.count_nonzero(self.h_ticks > 0))


def simulate_run(cfg: ProtocolConfig, run: int) -> SimulatedRun:
    """Generate both detector streams of one run plus its ground-truth entries."""
    fp, op = cfg.fp, cfg.op
    rng_arrivals = stream(cfg.seed, run, "arrivals")
    rng_labels = stream(cfg.seed, run, "labels")
    rng_eps = stream(cfg.seed, run, "epsilon")
    rng_t0 = stream(cfg.seed, run, "t0")

    rate = cfg.arrival_rate / cfg.bs.reflectivity if cfg.model == "des" else cfg.arrival_rate
    drift = cfg.phase_drift_per_run * (run - 1)
    windows = protocol_windows(cfg, run)

    times, phases, bounds, truth = [], [], [], {}
    offset = 0
    for w in windows:
        t = generate_arrivals(rate, w.seconds, rng_arrivals)
        if cfg.epsilon_mode == "segment":
            eps = rng_eps.uniform(-fp.eps0, fp.eps0) if fp.eps0 > 0 else 0.0
        else:
            eps = rng_eps.uniform(-fp.eps0, fp.eps0, t.size) if fp.eps0 > 0 else 0.0

        if w.moving:
            x = w.setting_from + (w.setting - w.setting_from) * t / w.seconds
            osc = op
        else:
            x = float(w.setting)
            osc = op
            if cfg.randomize_t0:
                osc = op.model_copy(update={"t0": float(rng_t0.uniform(0.0, op.period))})
            true_phase = fp.omega_o * w.setting + fp.chi_o + drift
            if cfg.epsilon_mode == "segment":
                true_phase += eps
            truth[w.setting] = (true_phase, osc.t0)

        phases.append(instantaneous_phase(fp, osc, x, t, eps + drift))
        times.append(t)
        bounds.append((offset, offset + t.size))
        offset += t.size

    all_phases = np.concatenate(phases) if phases else np.empty(0)
    if cfg.model == "des":
        labels = AdaptiveNetwork(cfg.bs, cfg.gamma).process_batch(all_phases, rng_labels)
    else:
        labels = collapse_labels(all_phases, fp, rng_labels)

    o_parts, h_parts, entries = [], [], []
    bumped = 0
    prefix = f"run.{run}"
    for w, t, (lo, hi) in zip(windows, times, bounds):
        lab = labels[lo:hi]
        q = w.start_tick + np.floor(t / TICK_SECONDS).astype(np.int64)
        counts = {}
        for label, parts in ((O_LABEL, o_parts), (H_LABEL, h_parts)):
            raw = q[lab == label]
            ticks = bump_ticks(raw, w.start_tick, w.start_tick + w.n_ticks)
            bumped += int(np.count_nonzero(ticks != raw))
            parts.append(-ticks if w.moving else ticks)
            counts[label] = raw.size
        if not w.moving:
            key = f"{prefix}.segment.{w.setting}"
            true_phase, t0 = truth[w.setting]
            entries += [
                (f"{key}.start_tick", w.start_tick),
                (f"{key}.end_tick", w.end_tick),
                (f"{key}.true_phase", float(true_phase)),
                (f"{key}.t0", float(t0)),
                (f"{key}.count_o", counts[O_LABEL]),
                (f"{key}.count_h", counts[H_LABEL]),
            ]

    o_ticks = np.concatenate(o_parts)
    h_ticks = np.concatenate(h_parts)
    collisions = int(np.intersect1d(np.abs(o_ticks), np.abs(h_ticks), assume_unique=True).size)
    start_seconds = (windows[0].start_tick - 1) * TICK_SECONDS
    entries = [
        (f"{prefix}.start_seconds", start_seconds),
        (f"{prefix}.incident", int(labels.size)),
        (f"{prefix}.lost", int(np.count_nonzero(labels == 0))),
        (f"{prefix}.bumped_ticks", bumped),
        (f"{prefix}.collision_pairs", collisions),
    ] + entries
    return SimulatedRun(run, o_ticks, h_ticks, entries, int(labels.size), bumped, collisions)


# ─── Whole protocol ──────────────────────────────────────────────────

@dataclass
class ProtocolResult:
    out_dir: Path
    manifest: Path
    runs: int
    events: int
    stationary_events: int
    collisions: int
    bumped: int


def run_id(run: int, n_runs: int) -> str:
    return f"run{run:0{max(2, len(str(n_runs)))}d}"


def _simulate_and_write(cfg: ProtocolConfig, run: int, out_dir: str) -> dict:
    sim = simulate_run(cfg, run)
    name = run_id(run, cfg.n_runs)
    write_stamp_array(Path(out_dir) / f"{name}O.stamp", sim.o_ticks)
    write_stamp_array(Path(out_dir) / f"{name}H.stamp", sim.h_ticks)
    return {
        "run": run,
        "entries": sim.entries,
        "events": int(sim.o_ticks.size + sim.h_ticks.size),
        "stationary": sim.stationary_events,
        "collisions": sim.collisions,
        "bumped": sim.bumped,
    }


def resolve_jobs(jobs: int) -> int:
    return jobs if jobs and jobs > 0 else (os.cpu_count() or 1)


def run_protocol(cfg: ProtocolConfig, out_dir: PathLike, jobs: int = 1) -> ProtocolResult:
    """Write n_runs stamp-file pairs and the manifest into out_dir."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create {out_dir}: {e}") from e
    if cfg.model == "des" and cfg.gamma == 1:
        logger.warning("gamma = 1: the DES network keeps its cold-start state")

    jobs = min(resolve_jobs(jobs), cfg.n_runs)
    runs = range(1, cfg.n_runs + 1)
    if jobs == 1:
        results = [_simulate_and_write(cfg, r, str(out_dir)) for r in runs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_simulate_and_write, [cfg] * cfg.n_runs, runs, [str(out_dir)] * cfg.n_runs))

    entries: List[Tuple[str, object]] = [("tick_seconds", TICK_SECONDS)]
    for res in sorted(results, key=lambda r: r["run"]):
        entries += res["entries"]
        logger.info(
            f"Run {res['run']}: {res['events']} events ({res['stationary']} stationary), "
            f"{res['collisions']} collision pairs, {res['bumped']} bumped ticks"
        )
    manifest = out_dir / "manifest.txt"
    write_manifest(manifest, cfg, entries)

    result = ProtocolResult(
        out_dir=out_dir,
        manifest=manifest,
        runs=cfg.n_runs,
        events=sum(r["events"] for r in results),
        stationary_events=sum(r["stationary"] for r in results),
        collisions=sum(r["collisions"] for r in results),
        bumped=sum(r["bumped"] for r in results),
    )
    logger.info(f"Simulated {result.runs} runs, {result.stationary_events} stationary events into {out_dir}")
    return result


def manifest_segments(truth: Dict[str, str], run: int, n_settings: int) -> List[Dict[str, float]]:
    """Per-setting ground truth of one run read back from a manifest."""
    rows = []
    for setting in range(1, n_settings + 1):
        key = f"run.{run}.segment.{setting}"
        rows.append({
            "setting": setting,
            "start_tick": int(truth[f"{key}.start_tick"]),
            "end_tick": int(truth[f"{key}.end_tick"]),
            "true_phase": float(truth[f"{key}.true_phase"]),
            "count_o": int(truth[f"{key}.count_o"]),
            "count_h": int(truth[f"{key}.count_h"]),
        })
    return rows


# ─── Expected fringe ─────────────────────────────────────────────────

def des_equivalent_fringe(bs: BeamSplitterModel, gamma: float, fp: FringeParams) -> FringeParams:
    """Fringe parameters whose collapse-model probabilities equal the DES stationary frequencies."""
    a = 2 * bs.reflectivity * bs.transmissivity
    depth = des_visibility(bs, gamma)
    total = fp.a_o + fp.a_h
    return FringeParams(
        a_o=total * a,
        a_h=total * (1 - a),
        b_o=depth,
        b_h=a * depth / (1 - a),
        omega_o=fp.omega_o,
        omega_h=fp.omega_o,
        chi_o=fp.chi_o,
        chi_h=float(np.pi - np.mod(np.pi - (fp.chi_o + np.pi), 2 * np.pi)),
        eps0=fp.eps0,
    )


def oscillation_average(op: OscillationParams, dwell: float, randomize_t0: bool = False) -> complex:
    """Mean over the dwell of exp(i Y sin(omega (t - t0)))."""
    if op.y == 0:
        return 1 + 0j
    if randomize_t0:
        return complex(j0(op.y))
    re = quad(lambda t: math.cos(op.y * math.sin(op.omega * (t - op.t0))), 0, dwell, limit=400)[0]
    im = quad(lambda t: math.sin(op.y * math.sin(op.omega * (t - op.t0))), 0, dwell, limit=400)[0]
    return complex(re, im) / dwell


def expected_fringe(cfg: ProtocolConfig) -> FringeParams:
    """Run-averaged count fringe the simulation should produce."""
    base = des_equivalent_fringe(cfg.bs, cfg.gamma, cfg.fp) if cfg.model == "des" else cfg.fp
    osc = oscillation_average(cfg.op, cfg.dwell, cfg.randomize_t0)
    drift = np.mean(np.exp(1j * cfg.phase_drift_per_run * np.arange(cfg.n_runs)))
    factor = osc * drift

    a = base.o_fraction
    b = base.b_o * float(sinc(base.eps0)) * abs(factor)
    chi_o = base.chi_o + float(np.angle(factor))
    total = cfg.arrival_rate * cfg.dwell
    wrap = lambda c: float(np.pi - np.mod(np.pi - c, 2 * np.pi))  # noqa: E731
    return FringeParams(
        a_o=total * a,
        a_h=total * (1 - a),
        b_o=b,
        b_h=a * b / (1 - a),
        omega_o=base.omega_o,
        omega_h=base.omega_o,
        chi_o=wrap(chi_o),
        chi_h=wrap(chi_o + np.pi),
        eps0=base.eps0,
    )
