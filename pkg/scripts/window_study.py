"""
Correlation fits on the first and the last seconds of every dwell.

An oscillation produced by the phase shifter settling after a move would show
up only early in the dwell; one that persists shows up in both halves.

Usage:
  python scripts/window_study.py data/ --out window_study/
  python scripts/window_study.py data/ --out window_study/ --seconds 5 --filter O
"""

import argparse
import os
import sys
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pandas as pd

from src.domain.models import SOURCES
from src.exceptions import ToolkitError
from src.services.analysis_service import run_correlate
from src.storage.repository import read_manifest, write_table


def study(data_dir: Path, out: Path, seconds: float, sources, jobs: int, bin_width: float) -> pd.DataFrame:
    n_settings, dwell = 33, 10.0
    manifest = data_dir / "manifest.txt"
    if manifest.is_file():
        cfg, _ = read_manifest(manifest)
        n_settings, dwell = cfg.n_settings, cfg.dwell

    rows = []
    for where in ("first", "last"):
        result = run_correlate(data_dir, out / where, n_settings, dwell, jobs, sources, bin_width,
                               window=f"{where}:{seconds:g}")
        for source in sources:
            table = result.amplitudes[result.amplitudes["source"] == source]
            rows.append({
                "window": where,
                "source": source,
                "detected_settings": int(table["detected"].sum()),
                "median_period": result.median_period(source),
                "sum_abs_amplitude": float(table["oscillation_amplitude"].sum()),
            })
    summary = pd.DataFrame(rows)
    write_table(summary, out / "window_study.csv")
    return summary


def main():
    parser = argparse.ArgumentParser(description="First vs last seconds of each dwell")
    parser.add_argument("inputs", help="Directory with stamp-file pairs")
    parser.add_argument("--out", default="window_study", help="Output directory (default: window_study)")
    parser.add_argument("--seconds", type=float, default=5.0, help="Window length in seconds (default: 5)")
    parser.add_argument("--filter", choices=SOURCES, help="Only this correlation source")
    parser.add_argument("--bin-width", type=float, default=0.01)
    parser.add_argument("--jobs", type=int, default=0)
    args = parser.parse_args()

    sources = (args.filter,) if args.filter else SOURCES
    try:
        summary = study(Path(args.inputs), Path(args.out), args.seconds, sources, args.jobs, args.bin_width)
    except ToolkitError as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(e.exit_code)
    print(summary.to_string(index=False))


if __name__ == "__main__":
    main()
