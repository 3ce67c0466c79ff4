"""``kpzh-lab`` command-line entry point.

Exit status: 0 when every report passes, 1 when any suite check fails,
2 on usage or configuration errors (validated before any computation).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

from . import suites
from ._parallel import resolve_threads
from .errors import KpzhLabError
from .kpzh import DEFAULT_STEP, sample_kpzh
from .paths import DriftVector, Grid, RngStream, make_grid, write_paths_csv
from .queue_ops import TransformConfig
from .stats import reports_to_json, summary_line

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SUITES = {
    "verify-identities": suites.identities_suite,
    "verify-invariance": suites.invariance_suite,
    "verify-gamma": suites.gamma_suite,
    "verify-limits": suites.limits_suite,
    "verify-kernels": suites.kernels_suite,
    "jump-scan": suites.jump_suite,
}
COMMANDS = ("sample", "figure1", *SUITES)


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    beta: float | None
    drifts: tuple | None
    grid: Grid | None
    reps: int
    seed: int
    epsilon: float
    y: float
    alpha: float
    output: str | None
    threads: int | None
    strict: bool

    def suite_config(self) -> suites.SuiteConfig:
        return suites.SuiteConfig(
            seed=self.seed,
            reps=self.reps,
            beta=self.beta,
            drifts=self.drifts,
            grid=self.grid,
            y=self.y,
            epsilon=self.epsilon,
            alpha=self.alpha,
            threads=self.threads,
            strict=self.strict,
        )


def _parse_drifts(text: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid drift list {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty drift list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kpzh-lab", description="Sample and verify coupled Brownian families.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--beta", type=float, default=None, help="inverse temperature")
    parser.add_argument("--drifts", type=_parse_drifts, default=None, help="comma-separated increasing drifts")
    parser.add_argument("--xmin", type=float, default=None)
    parser.add_argument("--xmax", type=float, default=None)
    parser.add_argument("--step", type=float, default=None)
    parser.add_argument("--reps", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epsilon", type=float, default=0.1)
    parser.add_argument("--y", type=float, default=1.0)
    parser.add_argument("--alpha", type=float, default=0.01)
    parser.add_argument("--output", default=None, help="CSV file (sample), directory (figure1) or JSON file (suites)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: KPZH_LAB_THREADS or 1)")
    parser.add_argument("--strict", action="store_true", help="turn precondition warnings into errors")
    return parser


def _grid_from_args(args, default: tuple[float, float, float] | None) -> Grid | None:
    given = (args.xmin, args.xmax, args.step)
    if all(v is None for v in given) and default is None:
        return None
    base = default or (-20.0, 5.0, DEFAULT_STEP)
    x_min, x_max, step = (b if v is None else v for v, b in zip(given, base))
    return make_grid(x_min, x_max, step)


def make_config(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    try:
        if args.reps < 1:
            raise UsageError("--reps must be positive")
        if args.beta is not None and not args.beta > 0:
            raise UsageError("--beta must be positive")
        if not 0 < args.alpha < 1:
            raise UsageError("--alpha must lie in (0, 1)")
        if args.epsilon <= 0 or args.y < 0:
            raise UsageError("--epsilon must be positive and --y nonnegative")
        threads = resolve_threads(args.threads)
        drifts = tuple(DriftVector(args.drifts).drifts) if args.drifts is not None else None
        grid_default = (-20.0, 5.0, DEFAULT_STEP) if args.command == "sample" else None
        if args.command == "figure1" and any(v is not None for v in (args.xmin, args.xmax, args.step)):
            grid_default = suites.FIGURE_GRID
        grid = _grid_from_args(args, grid_default)
    except (KpzhLabError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return RunConfig(
        args.command, args.beta, drifts, grid, args.reps, args.seed, args.epsilon, args.y, args.alpha, args.output, threads, args.strict
    )


def _run_sample(cfg: RunConfig) -> int:
    drifts = cfg.drifts or (0.0, 1.0)
    beta = cfg.beta or 1.0
    tcfg = TransformConfig(beta, strict=cfg.strict, tail_correction=True)
    sample = sample_kpzh(drifts, beta, cfg.grid, RngStream(cfg.seed), tcfg)
    columns = [p.values for p in sample.paths]
    write_paths_csv(cfg.output if cfg.output else sys.stdout, sample.grid, columns)
    return EXIT_OK


def _run_figure(cfg: RunConfig) -> int:
    written = suites.write_figure(cfg.output or ".", cfg.seed, cfg.grid)
    for path in written:
        print(path)
    return EXIT_OK


def _run_suite(cfg: RunConfig) -> int:
    reports = SUITES[cfg.command](cfg.suite_config())
    text = reports_to_json(reports)
    if cfg.output:
        Path(cfg.output).write_text(text + "\n")
    print(text)
    print(summary_line(reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def run(cfg: RunConfig) -> int:
    if cfg.command == "sample":
        return _run_sample(cfg)
    if cfg.command == "figure1":
        return _run_figure(cfg)
    return _run_suite(cfg)


def main(argv=None) -> int:
    try:
        cfg = make_config(argv)
    except UsageError as exc:
        print(f"kpzh-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return run(cfg)
    except KpzhLabError as exc:
        print(f"kpzh-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
