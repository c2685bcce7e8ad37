"""Command line entry point: ``roompassage study --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .config import OUT_ENV, PRESETS, ConfigError, StudyConfig, load_config, preset_config
from .study import StudyError, emit_report, run_study

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roompassage", description="Spectral convergence studies for room-and-passage domains.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("study", help="run a convergence study")
    s.add_argument("--config", type=Path, help="flat TOML study description")
    s.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./study-out)")
    s.add_argument("--preset", choices=sorted(PRESETS), help="regime preset; overrides the config's preset")
    s.add_argument("--jobs", type=int, help="worker processes for the eps sweep")
    s.add_argument("--lambda", dest="Lambda", type=float, help="spectral window upper end")
    s.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args) -> StudyConfig:
    overrides = dict(jobs=args.jobs, Lambda=args.Lambda)
    if args.config is None:
        if args.preset is None:
            raise ConfigError("either --config or --preset is required")
        return preset_config(args.preset, **overrides)
    cfg = load_config(args.config)
    if args.preset:
        alpha, beta = PRESETS[args.preset]
        cfg = replace(cfg, preset=args.preset, alpha=alpha, beta=beta, explicit=None)
    return cfg.with_overrides(**overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or config.out or Path(os.environ.get(OUT_ENV, "study-out"))
    try:
        outcome = run_study(config)
        artifacts = emit_report(outcome, out)
    except StudyError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    rep = outcome.report
    for r in rep.rows:
        print(f"eps={r.eps:<10g} dof={r.dof:<8d} eigenvalues={r.certified_count:<4d} dist_H={r.dist_H:.6g}")
    print(f"verdict: {'pass' if rep.passed else 'fail'} ({rep.verdict.reason}); report at {artifacts.report}")
    return EXIT_OK if rep.passed else EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
