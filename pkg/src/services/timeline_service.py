"""Timeline service — stamp files, O/H merge with collision discard, segmentation by setting."""

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.config import TICK_SECONDS
from src.domain.models import (
    H_LABEL,
    O_LABEL,
    MergedStream,
    RunRecord,
    SettingSegment,
    TimeStamp,
)
from src.exceptions import DataFormatError, ModelError, SegmentationError
from src.storage.repository import read_stamp_array, write_stamp_array, write_table
from src.utils.logger import logger

PathLike = Union[str, Path]

DWELL_TOLERANCE = 0.01  # fraction of the dwell


# ─── Stamp files ─────────────────────────────────────────────────────

def parse_stamp_file(path: PathLike) -> np.ndarray:
    """Signed ticks in file order (negative = phase shifter moving)."""
    ticks = read_stamp_array(path)
    logger.debug(f"Parsed {ticks.size} stamps from {path}")
    return ticks


def parse_timestamps(path: PathLike) -> List[TimeStamp]:
    """Object view of parse_stamp_file for small files."""
    return [TimeStamp(int(t)) for t in parse_stamp_file(path)]


def write_stamp_file(path: PathLike, stamps: Sequence[Union[int, TimeStamp]]) -> None:
    ticks = np.asarray([s.ticks if isinstance(s, TimeStamp) else int(s) for s in stamps], dtype=np.int64)
    _check_stream(ticks, "stamps")
    write_stamp_array(path, ticks)


def _check_stream(ticks: np.ndarray, name: str) -> None:
    if np.any(ticks == 0):
        raise DataFormatError(f"{name}: time stamp 0 is not allowed")
    if np.any(np.diff(np.abs(ticks)) <= 0):
        raise DataFormatError(f"{name}: |ticks| not strictly increasing")


# ─── Merge ───────────────────────────────────────────────────────────

def merge_streams(o: Sequence[int], h: Sequence[int]) -> MergedStream:
    """Merge on |ticks|; a tick present in both streams removes both events."""
    o = np.asarray(o, dtype=np.int64)
    h = np.asarray(h, dtype=np.int64)
    _check_stream(o, "O stream")
    _check_stream(h, "H stream")

    clash = np.intersect1d(np.abs(o), np.abs(h), assume_unique=True)
    if clash.size:
        o = o[~np.isin(np.abs(o), clash, assume_unique=True)]
        h = h[~np.isin(np.abs(h), clash, assume_unique=True)]

    ticks = np.concatenate([o, h])
    labels = np.concatenate([
        np.full(o.size, O_LABEL, dtype=np.int8),
        np.full(h.size, H_LABEL, dtype=np.int8),
    ])
    order = np.argsort(np.abs(ticks), kind="stable")
    return MergedStream(ticks=ticks[order], labels=labels[order], discarded=2 * int(clash.size))


def collision_fraction(merged: MergedStream) -> float:
    """Discarded events per kept stationary event."""
    kept = int(np.count_nonzero(merged.ticks > 0))
    return merged.discarded / kept if kept else 0.0


# ─── Segmentation ────────────────────────────────────────────────────

def _positive_blocks(ticks: np.ndarray) -> List[Tuple[int, int]]:
    """[start, stop) index ranges of maximal runs of positive stamps."""
    positive = (ticks > 0).astype(np.int8)
    edges = np.diff(np.concatenate([[0], positive, [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), stops.tolist()))


def settings_of_events(merged: MergedStream) -> np.ndarray:
    """Setting index of each event (k-th positive block -> k), 0 while moving."""
    settings = np.zeros(len(merged), dtype=np.int32)
    for k, (start, stop) in enumerate(_positive_blocks(merged.ticks), start=1):
        settings[start:stop] = k
    return settings


def segment_by_setting(
    merged: MergedStream,
    n_settings: int = 33,
    dwell: float = 10.0,
    run: int = 1,
    start_seconds: float = 0.0,
) -> RunRecord:
    """Split one run into one SettingSegment per positive block."""
    blocks = _positive_blocks(merged.ticks)
    if len(blocks) != n_settings:
        raise SegmentationError(f"run {run}: segment count mismatch ({len(blocks)} blocks, expected {n_settings})")

    limit = dwell * (1 + DWELL_TOLERANCE)
    segments = []
    for setting, (start, stop) in enumerate(blocks, start=1):
        ticks = merged.ticks[start:stop]
        span = float(ticks[-1] - ticks[0]) * TICK_SECONDS
        if span > limit:
            raise SegmentationError(f"run {run}: block X={setting} spans {span:.3f} s, dwell is {dwell} s")
        segments.append(SettingSegment(setting, ticks, merged.labels[start:stop], dwell))

    moving = int(np.count_nonzero(merged.ticks < 0))
    return RunRecord(
        run=run,
        segments=tuple(segments),
        discarded_collisions=merged.discarded,
        moving_events=moving,
        start_seconds=start_seconds,
    )


def load_run(
    run: int,
    o_path: PathLike,
    h_path: PathLike,
    n_settings: int = 33,
    dwell: float = 10.0,
    merged_csv: Optional[PathLike] = None,
) -> RunRecord:
    """Parse, merge and segment one stamp-file pair, optionally exporting the merged series."""
    o = parse_stamp_file(o_path)
    h = parse_stamp_file(h_path)
    merged = merge_streams(o, h)
    first = np.abs(merged.ticks[0]) if len(merged) else 1
    try:
        record = segment_by_setting(merged, n_settings, dwell, run=run, start_seconds=(first - 1) * TICK_SECONDS)
    except SegmentationError as e:
        raise SegmentationError(str(e), path=str(o_path)) from e
    if merged_csv is not None:
        export_merged_csv(merged, merged_csv)
    logger.info(
        f"Run {run}: {record.stationary_events} stationary, {record.moving_events} moving, "
        f"{record.discarded_collisions} discarded (fraction {collision_fraction(merged):.2e})"
    )
    return record


def trim_segment(segment: SettingSegment, start: float, stop: float) -> SettingSegment:
    """Keep events with start <= t - t_first < stop (seconds)."""
    if segment.ticks.size == 0:
        return segment
    offset = (segment.ticks - segment.ticks[0]) * TICK_SECONDS
    keep = (offset >= start) & (offset < stop)
    return SettingSegment(segment.setting, segment.ticks[keep], segment.labels[keep], segment.dwell)


# ─── Time differences ────────────────────────────────────────────────

def select_events(segment: SettingSegment, source: str) -> np.ndarray:
    """Ticks of the events kept by filter O, H or OH."""
    if source == "O":
        return segment.ticks[segment.labels == O_LABEL]
    if source == "H":
        return segment.ticks[segment.labels == H_LABEL]
    if source in ("OH", "x"):
        return segment.ticks
    raise ModelError(f"unknown event filter {source!r}")


def time_differences(segment: SettingSegment, source: str = "OH") -> np.ndarray:
    """Consecutive time differences of the filtered events, in seconds."""
    ticks = select_events(segment, source)
    if ticks.size < 2:
        raise ModelError(f"X={segment.setting}, filter {source}: fewer than 2 events")
    return np.diff(ticks).astype(np.float64) * TICK_SECONDS


# ─── Export ──────────────────────────────────────────────────────────

def merged_frame(merged: MergedStream) -> pd.DataFrame:
    return pd.DataFrame({
        "tick": np.abs(merged.ticks),
        "seconds": np.abs(merged.ticks) * TICK_SECONDS,
        "label": merged.labels.astype(np.int64),
        "moving_flag": (merged.ticks < 0).astype(np.int64),
        "setting": settings_of_events(merged),
    })


def export_merged_csv(merged: MergedStream, path: PathLike) -> None:
    write_table(merged_frame(merged), path)
