"""File storage: stamp files, key=value configs, manifests and CSV tables."""

import io
import json
import os
import re
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Tuple, Union

import numpy as np
import pandas as pd
from dotenv.parser import parse_stream
from pydantic import ValidationError

from src.domain.models import ProtocolConfig
from src.exceptions import ConfigError, DataFormatError, StorageError
from src.utils.logger import logger

PathLike = Union[str, Path]

_STAMP_LINE = re.compile(r"^[+-]?\d+$")
_FOREIGN_CHAR = re.compile(r"[^0-9+\-\s]")
_STAMP_NAME = re.compile(r"^(?P<run>.+)(?P<beam>[OH])\.stamp$")

FRINGE_KEYS = ("a_o", "a_h", "b_o", "b_h", "omega_o", "omega_h", "chi_o", "chi_h", "eps0")
OSCILLATION_KEYS = ("y", "omega", "t0")
PROTOCOL_KEYS = (
    "n_runs", "n_settings", "dwell", "move_duration", "arrival_rate", "seed",
    "model", "epsilon_mode", "randomize_t0", "phase_drift_per_run", "gamma",
)
CONFIG_KEYS = PROTOCOL_KEYS + ("reflectivity",) + FRINGE_KEYS + OSCILLATION_KEYS


# ─── Atomic writes ───────────────────────────────────────────────────

def atomic_write_text(path: PathLike, text: str) -> None:
    """Write text to a sibling temp file and rename it over the target."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


# ─── Stamp files ─────────────────────────────────────────────────────

def _scan_lines(path: Path, text: str) -> np.ndarray:
    """Line-by-line parse; pinpoints the first malformed line."""
    values: List[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if not _STAMP_LINE.match(line):
            raise DataFormatError(f"malformed stamp {line!r}", path=str(path), line=lineno)
        values.append(int(line))
    return np.asarray(values, dtype=np.int64)


def _line_of_entry(text: str, index: int) -> int:
    """1-based file line holding the index-th non-empty entry."""
    seen = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.strip():
            seen += 1
            if seen == index:
                return lineno
    return seen + 1


def _decode_ascii(path: Path, data: bytes) -> str:
    """ASCII text of a stamp file; a stray byte is a format error on its line."""
    try:
        return data.decode("ascii")
    except UnicodeDecodeError as e:
        line = data[: e.start].count(b"\n") + 1
        raise DataFormatError(f"non-ASCII byte 0x{data[e.start]:02x}", path=str(path), line=line) from e


def read_stamp_array(path: PathLike) -> np.ndarray:
    """Signed tick array of one stamp file, validated for sign and monotonicity."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    text = _decode_ascii(path, data)

    if not text.strip():
        return np.empty(0, dtype=np.int64)

    n_entries = sum(1 for raw in text.splitlines() if raw.strip())
    try:
        ticks = np.loadtxt(io.StringIO(text), dtype=np.int64, ndmin=1, comments=None)
    except ValueError:
        ticks = _scan_lines(path, text)
    # loadtxt splits on any whitespace; one value per line is required
    if ticks.ndim != 1 or ticks.size != n_entries or _FOREIGN_CHAR.search(text):
        ticks = _scan_lines(path, text)

    zero = np.flatnonzero(ticks == 0)
    if zero.size:
        raise DataFormatError("time stamp 0 is not allowed", path=str(path), line=_line_of_entry(text, int(zero[0])))

    bad = np.flatnonzero(np.diff(np.abs(ticks)) <= 0)
    if bad.size:
        raise DataFormatError(
            "|ticks| not strictly increasing",
            path=str(path),
            line=_line_of_entry(text, int(bad[0]) + 1),
        )
    return ticks


def write_stamp_array(path: PathLike, ticks: np.ndarray) -> None:
    """Canonical stamp file: one explicitly signed integer per line, LF terminated."""
    ticks = np.asarray(ticks, dtype=np.int64)
    text = "".join(f"{t:+d}\n" for t in ticks.tolist())
    atomic_write_text(path, text)


def discover_stamp_pairs(data_dir: PathLike) -> List[Tuple[str, Path, Path]]:
    """(run id, O file, H file) for every complete pair, sorted by run id."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataFormatError("not a directory", path=str(data_dir))

    found: Dict[str, Dict[str, Path]] = {}
    for entry in sorted(data_dir.iterdir()):
        m = _STAMP_NAME.match(entry.name)
        if m:
            found.setdefault(m.group("run"), {})[m.group("beam")] = entry

    pairs = []
    for run_id in sorted(found):
        beams = found[run_id]
        if set(beams) != {"O", "H"}:
            missing = "H" if "O" in beams else "O"
            raise DataFormatError(f"run {run_id} has no {missing} stamp file", path=str(data_dir))
        pairs.append((run_id, beams["O"], beams["H"]))

    if not pairs:
        raise DataFormatError("no stamp-file pairs found", path=str(data_dir))
    logger.info(f"Found {len(pairs)} stamp-file pairs in {data_dir}")
    return pairs


# ─── key=value files ─────────────────────────────────────────────────

def read_key_values(path: PathLike) -> Dict[str, Tuple[str, int]]:
    """key -> (raw value, line number). Duplicate keys and junk lines are errors."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            bindings = list(parse_stream(f))
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e

    values: Dict[str, Tuple[str, int]] = {}
    for binding in bindings:
        line = binding.original.line
        if binding.error:
            raise ConfigError(f"cannot parse {binding.original.string.strip()!r}", path=str(path), line=line)
        if binding.key is None:
            continue
        if binding.value is None:
            raise ConfigError(f"key {binding.key!r} has no value", path=str(path), line=line)
        if binding.key in values:
            raise ConfigError(f"duplicate key {binding.key!r}", path=str(path), line=line)
        values[binding.key] = (binding.value.strip(), line)
    return values


def write_key_values(path: PathLike, items: Iterable[Tuple[str, object]], header: str = "") -> None:
    lines = [f"# {row}" for row in header.splitlines()] if header else []
    for key, value in items:
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = repr(float(value))
        lines.append(f"{key}={value}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def config_from_mapping(raw: Mapping[str, str], lines: Mapping[str, int] = None, path: str = None) -> ProtocolConfig:
    """Build a ProtocolConfig from flat string values; errors name the offending line."""
    lines = lines or {}
    for key in raw:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}", path=path, line=lines.get(key))

    data: Dict[str, object] = {k: v for k, v in raw.items() if k in PROTOCOL_KEYS}
    fp = {k: raw[k] for k in FRINGE_KEYS if k in raw}
    op = {k: raw[k] for k in OSCILLATION_KEYS if k in raw}
    if fp:
        data["fp"] = fp
    if op:
        data["op"] = op
    if "reflectivity" in raw:
        data["bs"] = {"reflectivity": raw["reflectivity"]}

    try:
        return ProtocolConfig.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        loc = [str(p) for p in err["loc"] if not str(p).isdigit()]
        key = next((p for p in reversed(loc) if p in CONFIG_KEYS), None)
        if key is None and loc and loc[0] in ("fp", "op", "bs"):
            # model-level validator: point at the first key of that group
            group = {"fp": FRINGE_KEYS, "op": OSCILLATION_KEYS, "bs": ("reflectivity",)}[loc[0]]
            key = next((k for k in group if k in raw), None)
        raise ConfigError(f"{key or 'config'}: {err['msg']}", path=path, line=lines.get(key)) from e


def read_config(path: PathLike) -> ProtocolConfig:
    """Parse an experiment config file."""
    entries = read_key_values(path)
    raw = {k: v for k, (v, _) in entries.items()}
    lines = {k: line for k, (_, line) in entries.items()}
    cfg = config_from_mapping(raw, lines, str(path))
    logger.info(f"Loaded config {path} (model={cfg.model}, runs={cfg.n_runs}, seed={cfg.seed})")
    return cfg


def config_items(cfg: ProtocolConfig) -> List[Tuple[str, object]]:
    """Flat key=value view of a config, in CONFIG_KEYS order."""
    flat: Dict[str, object] = {k: getattr(cfg, k) for k in PROTOCOL_KEYS}
    flat["reflectivity"] = cfg.bs.reflectivity
    flat.update(cfg.fp.model_dump())
    flat.update(cfg.op.model_dump())
    return [(k, flat[k]) for k in CONFIG_KEYS]


def write_config(cfg: ProtocolConfig, path: PathLike) -> None:
    write_key_values(path, config_items(cfg))


# ─── Manifest ────────────────────────────────────────────────────────

def write_manifest(path: PathLike, cfg: ProtocolConfig, entries: Iterable[Tuple[str, object]]) -> None:
    """Config keys first, then the per-run ground truth."""
    write_key_values(path, config_items(cfg) + list(entries), header="ground truth of a simulated experiment")


def read_manifest(path: PathLike) -> Tuple[ProtocolConfig, Dict[str, str]]:
    """Config plus the remaining manifest entries as raw strings."""
    entries = read_key_values(path)
    raw = {k: v for k, (v, _) in entries.items()}
    cfg_raw = {k: v for k, v in raw.items() if k in CONFIG_KEYS}
    truth = {k: v for k, v in raw.items() if k not in CONFIG_KEYS}
    lines = {k: line for k, (_, line) in entries.items()}
    return config_from_mapping(cfg_raw, lines, str(path)), truth


# ─── Tables ──────────────────────────────────────────────────────────

def write_table(df: pd.DataFrame, path: PathLike) -> None:
    """One header line, '.' decimal, columns in frame order."""
    atomic_write_text(path, df.to_csv(index=False, float_format="%.10g", lineterminator="\n"))


def write_sidecar(path: PathLike, metadata: Mapping[str, object]) -> None:
    atomic_write_text(path, json.dumps(dict(metadata), indent=2, sort_keys=True, default=str) + "\n")
