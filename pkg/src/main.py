"""Main entry point — simulate, analyze, fit, correlate and roundtrip subcommands.

Usage:
  python -m src.main simulate  --config configs/reference.cfg --out data/
  python -m src.main analyze   data/ --out results/
  python -m src.main fit       data/ --out results/
  python -m src.main correlate data/ --out results/ --filter O --window last:5
  python -m src.main roundtrip --config configs/reference.cfg --out roundtrip/
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import ValidationError

from src.config import get_settings
from src.domain.models import SOURCES, JobSpec, ProtocolConfig
from src.exceptions import ConfigError, FitError, ModelError, ToolkitError
from src.services.acceptance_service import run_roundtrip
from src.services.analysis_service import analyze_dataset, run_correlate, run_fit
from src.services.simulator_service import run_protocol
from src.storage.repository import read_config, read_manifest
from src.utils.logger import logger, set_verbose


# ─── Argument parsing ────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(
        prog="neutron-ts",
        description="Time-stamped neutron interferometry: simulation and time-series analysis",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", default=settings.output_dir, help=f"Output directory (default: {settings.output_dir})")
        p.add_argument("--config", help="Experiment config file (key=value)")
        p.add_argument("--seed", type=int, help="Override the config seed")
        p.add_argument("--jobs", type=int, default=settings.jobs, help="Worker processes, 0 = all cores")
        p.add_argument("--verbose", action="store_true", help="Debug logging")

    def analysis(p: argparse.ArgumentParser) -> None:
        p.add_argument("inputs", help="Directory with <run>O.stamp / <run>H.stamp pairs")
        p.add_argument("--filter", choices=SOURCES, help="Only this correlation source")
        p.add_argument("--bin-width", type=float, default=settings.bin_width,
                       help=f"Correlation bin width in seconds (default: {settings.bin_width})")
        p.add_argument("--window", help="Use only first:<s> or last:<s> seconds of each dwell")

    p = sub.add_parser("simulate", help="Write synthetic stamp files and a manifest")
    common(p)
    p = sub.add_parser("analyze", help="Full CSV suite from stamp files")
    common(p)
    analysis(p)
    p = sub.add_parser("fit", help="Counts, phase drift and variance fits only")
    common(p)
    p.add_argument("inputs", help="Directory with stamp-file pairs")
    p = sub.add_parser("correlate", help="Correlation curves and their fits only")
    common(p)
    analysis(p)
    p = sub.add_parser("roundtrip", help="simulate -> analyze -> acceptance report")
    common(p)
    p.add_argument("--bin-width", type=float, default=settings.bin_width)
    return parser


def job_from_args(args: argparse.Namespace) -> JobSpec:
    try:
        return _job(args)
    except ValidationError as e:
        err = e.errors()[0]
        raise ConfigError(f"--{str(err['loc'][0]).replace('_', '-')}: {err['msg']}") from e


def _job(args: argparse.Namespace) -> JobSpec:
    return JobSpec(
        subcommand=args.subcommand,
        inputs=getattr(args, "inputs", None),
        output_dir=args.out,
        config_path=args.config,
        seed=args.seed,
        jobs=args.jobs,
        filter=getattr(args, "filter", None),
        bin_width=getattr(args, "bin_width", get_settings().bin_width),
        window=getattr(args, "window", None),
        verbose=args.verbose,
    )


# ─── Config resolution ───────────────────────────────────────────────

def load_config(job: JobSpec) -> ProtocolConfig:
    cfg = read_config(job.config_path) if job.config_path else ProtocolConfig()
    if job.seed is not None:
        if job.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {job.seed}")
        cfg = cfg.model_copy(update={"seed": job.seed})
    return cfg


def protocol_shape(job: JobSpec) -> Tuple[int, float]:
    """(n_settings, dwell) from --config, else a manifest next to the data, else the defaults."""
    if job.config_path:
        cfg = read_config(job.config_path)
        return cfg.n_settings, cfg.dwell
    manifest = Path(job.inputs) / "manifest.txt"
    if manifest.is_file():
        cfg, _ = read_manifest(manifest)
        return cfg.n_settings, cfg.dwell
    cfg = ProtocolConfig()
    return cfg.n_settings, cfg.dwell


# ─── Commands ────────────────────────────────────────────────────────

def cmd_simulate(job: JobSpec) -> None:
    cfg = load_config(job)
    result = run_protocol(cfg, job.output_dir, job.jobs)
    print(f"runs: {result.runs}  events: {result.events}  stationary: {result.stationary_events}  "
          f"collisions: {result.collisions}")


def cmd_analyze(job: JobSpec, argv: List[str]) -> None:
    n_settings, dwell = protocol_shape(job)
    sources = (job.filter,) if job.filter else SOURCES
    result = analyze_dataset(job.inputs, job.output_dir, n_settings, dwell, job.jobs, sources,
                             job.bin_width, job.window, argv)
    if job.filter:
        rows = result.amplitudes
        hits = int(rows["detected"].sum())
        print(f"C_{job.filter}: oscillation at {hits}/{n_settings} settings"
              + ("" if hits else " (oscillation-free)"))


def cmd_fit(job: JobSpec, argv: List[str]) -> None:
    n_settings, dwell = protocol_shape(job)
    result = run_fit(job.inputs, job.output_dir, n_settings, dwell, job.jobs, argv)
    fp = result.fringe
    print(f"A_O={fp.a_o:.1f} B_O={fp.b_o:.3f} Omega={fp.omega_o:.4f} chi_O={fp.chi_o:.3f}  "
          f"A_H={fp.a_h:.1f} B_H={fp.b_h:.3f} chi_H={fp.chi_h:.3f}")
    if result.variance is not None:
        print(f"eps0={result.variance.eps0:.4f}")


def cmd_correlate(job: JobSpec, argv: List[str]) -> None:
    n_settings, dwell = protocol_shape(job)
    sources = (job.filter,) if job.filter else SOURCES
    result = run_correlate(job.inputs, job.output_dir, n_settings, dwell, job.jobs, sources,
                           job.bin_width, job.window, argv)
    for source in sources:
        period = result.median_period(source)
        print(f"C_{source}: " + (f"T = {period:.3f} s" if period is not None else "no oscillation"))


def cmd_roundtrip(job: JobSpec, argv: List[str]) -> None:
    run_roundtrip(load_config(job), job.output_dir, job.jobs, job.bin_width, argv)


def dispatch(job: JobSpec, argv: List[str]) -> None:
    if job.subcommand == "simulate":
        cmd_simulate(job)
    elif job.subcommand == "analyze":
        cmd_analyze(job, argv)
    elif job.subcommand == "fit":
        cmd_fit(job, argv)
    elif job.subcommand == "correlate":
        cmd_correlate(job, argv)
    else:
        cmd_roundtrip(job, argv)


def run(job: JobSpec, argv: List[str]) -> None:
    """Run one subcommand; rejected model inputs map onto the config or data exit code."""
    try:
        dispatch(job, argv)
    except ModelError as e:
        # simulate only sees config values, the other commands see measured data
        if job.subcommand == "simulate":
            raise ConfigError(str(e)) from e
        raise FitError(str(e)) from e
    except ValidationError as e:
        problems = "; ".join(err["msg"] for err in e.errors())
        if job.subcommand == "simulate":
            raise ConfigError(problems) from e
        raise FitError(problems) from e


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    set_verbose(args.verbose)
    try:
        job = job_from_args(args)
        run(job, argv)
    except ToolkitError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
