"""Command-line convergence studies.

``lirkamf run`` executes a single experiment described by flags (optionally
on top of a config file); ``lirkamf sweep CONFIG`` runs every block of an
INI-style config file.  Results are written as CSV, one row per step count.

Config file example::

    [lirk3-amfr1]
    problem = allen-cahn
    grid-size = 19
    method = lirk3
    strategy = amfr1
    steps = 25, 50, 100, 200

    [brusselator]
    problem = brusselator
    case = 1
    grid-size = 19
    method = lirk4
    strategy = amf
    splitting = three-way
    steps = 25, 50, 100
"""

from __future__ import annotations

import argparse
import configparser
import csv
import functools
import io
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import estimate_order
from .integrator import Strategy, integrate, relative_error
from .problems import build_allen_cahn, build_brusselator
from .tableaus import lirk3, lirk4

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "CSV_COLUMNS",
    "run_experiment",
    "run_sweep",
    "write_csv",
    "load_config_file",
    "main",
]

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "problem",
    "case",
    "splitting",
    "M",
    "method",
    "strategy",
    "steps",
    "h",
    "error",
    "estimated_order",
    "diverged",
    "cpu_seconds",
    "error_message",
)
PROBLEMS = ("allen-cahn", "brusselator")
METHODS = {"lirk3": lirk3, "lirk4": lirk4}
STRATEGIES = ("exact", "amf", "amfr1", "amfr2", "amf-calvo")
SPLITTINGS = ("two-way", "three-way")
REFERENCE_FACTOR = 16


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "allen-cahn"
    case: int = 1
    M: int = 19
    method: str = "lirk3"
    strategy: str = "exact"
    steps: tuple = (25, 50, 100, 200)
    splitting: str = "two-way"
    output: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError("problem", f"expected one of {PROBLEMS}, got {self.problem!r}")
        if self.case not in (1, 2):
            raise ConfigError("case", f"expected 1 or 2, got {self.case!r}")
        if not isinstance(self.M, int) or self.M < 2:
            raise ConfigError("grid-size", f"expected an integer >= 2, got {self.M!r}")
        if self.method not in METHODS:
            raise ConfigError("method", f"expected one of {tuple(METHODS)}, got {self.method!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"expected one of {STRATEGIES}, got {self.strategy!r}")
        if self.splitting not in SPLITTINGS:
            raise ConfigError("splitting", f"expected one of {SPLITTINGS}, got {self.splitting!r}")
        if self.problem == "allen-cahn" and self.splitting != "two-way":
            raise ConfigError("splitting", "allen-cahn only supports two-way splitting")
        steps = tuple(self.steps)
        if not steps:
            raise ConfigError("steps", "at least one step count is required")
        if any(not isinstance(n, int) or n < 1 for n in steps):
            raise ConfigError("steps", f"step counts must be positive integers, got {steps}")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError("steps", f"step counts must be strictly increasing, got {steps}")
        return self


def _build(problem: str, case: int, M: int, splitting: str):
    if problem == "allen-cahn":
        return build_allen_cahn(M)
    return build_brusselator(M, case=case, splitting=splitting)


@functools.lru_cache(maxsize=8)
def reference_solution(problem: str, case: int, M: int, steps: int) -> np.ndarray:
    """Terminal state from LIRK4 with exact solves; cached per (problem, case, M, steps).

    The two-way build is used for every splitting since all builds share the
    same right-hand side.
    """
    build = _build(problem, case, M, "two-way")
    y, report = integrate(build.problem, lirk4(), Strategy("exact"), steps)
    if report.diverged:
        raise RuntimeError(f"reference run with {steps} steps diverged")
    if build.problem.reference is not None:
        t_end = build.problem.tspan[1]
        check = relative_error(y, build.problem.reference(t_end))
        logger.info("reference (%d steps) vs manufactured solution: %.3e", steps, check)
    y.setflags(write=False)
    return y


def _base_row(cfg: ExperimentConfig) -> dict:
    return {
        "problem": cfg.problem,
        "case": cfg.case if cfg.problem == "brusselator" else None,
        "splitting": cfg.splitting,
        "M": cfg.M,
        "method": cfg.method,
        "strategy": cfg.strategy,
        "steps": None,
        "h": None,
        "error": None,
        "estimated_order": None,
        "diverged": None,
        "cpu_seconds": None,
        "error_message": None,
    }


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Run one convergence study; returns one row (dict keyed by ``CSV_COLUMNS``) per step count."""
    cfg.validate()
    build = _build(cfg.problem, cfg.case, cfg.M, cfg.splitting)
    problem = build.problem
    tableau = METHODS[cfg.method]()
    strategy = Strategy.parse(cfg.strategy)
    reference = None
    if problem.reference is None:
        reference = reference_solution(cfg.problem, cfg.case, cfg.M, REFERENCE_FACTOR * max(cfg.steps))

    rows = []
    hs, errors = [], []
    for n in cfg.steps:
        _, report = integrate(problem, tableau, strategy, n, reference=reference)
        row = _base_row(cfg)
        row.update(steps=n, h=report.h, error=report.error, diverged=report.diverged, cpu_seconds=report.cpu_seconds)
        if not report.diverged and report.error and report.error > 0:
            hs.append(report.h)
            errors.append(report.error)
            if len(hs) >= 3:
                row["estimated_order"] = estimate_order(hs, errors)
        rows.append(row)
    return rows


def _run_isolated(cfg: ExperimentConfig) -> list[dict]:
    try:
        return run_experiment(cfg)
    except Exception as exc:  # isolate per-config failures
        row = _base_row(cfg)
        row["error_message"] = f"{type(exc).__name__}: {exc}"
        return [row]


def run_sweep(configs, parallel: bool = False, max_workers: int | None = None) -> list[dict]:
    """Run several experiments; rows are returned in input order.

    A failing configuration contributes a single row carrying ``error_message``.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("empty sweep")
    if parallel and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_run_isolated, configs))
    else:
        results = [_run_isolated(cfg) for cfg in configs]
    return [row for rows in results for row in rows]


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(rows, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_format_value(row.get(col)) for col in CSV_COLUMNS])


def format_summary(rows) -> str:
    out = io.StringIO()
    header = f"{'problem':<12} {'split':<9} {'M':>4} {'method':<6} {'strategy':<9} {'steps':>6} {'error':>11} {'order':>6}"
    print(header, file=out)
    print("-" * len(header), file=out)
    for r in rows:
        if r.get("error_message"):
            print(f"{r['problem']:<12} {r['splitting']:<9} {r['M']!s:>4} {r['method']:<6} {r['strategy']:<9} ERROR {r['error_message']}", file=out)
            continue
        err = "diverged" if r["diverged"] else (f"{r['error']:.3e}" if r["error"] is not None else "-")
        order = f"{r['estimated_order']:.2f}" if r["estimated_order"] is not None else ""
        print(
            f"{r['problem']:<12} {r['splitting']:<9} {r['M']:>4} {r['method']:<6} {r['strategy']:<9} "
            f"{r['steps']:>6} {err:>11} {order:>6}",
            file=out,
        )
    return out.getvalue()


# ------------------------------------------------------------------ parsing

_KEY_ALIASES = {"grid-size": "M", "grid_size": "M", "m": "M"}


def _parse_steps(text: str) -> tuple:
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError("steps", f"not a comma-separated list of integers: {text!r}") from None


def _coerce(key: str, value):
    if key == "steps":
        return value if isinstance(value, tuple) else _parse_steps(value)
    if key in ("M", "case"):
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError("grid-size" if key == "M" else key, f"not an integer: {value!r}") from None
    return str(value).strip()


def config_from_mapping(values: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    known = set(ExperimentConfig.__dataclass_fields__)
    kwargs = {}
    for raw_key, value in values.items():
        key = _KEY_ALIASES.get(raw_key, raw_key.replace("-", "_"))
        if key not in known:
            raise ConfigError(raw_key, "unknown key")
        kwargs[key] = _coerce(key, value)
    return replace(base or ExperimentConfig(), **kwargs)


def load_config_file(path) -> list[ExperimentConfig]:
    """One :class:`ExperimentConfig` per section of an INI-style file."""
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    sections = parser.sections()
    if not sections:
        raise ConfigError("config", f"no experiment blocks in {path}")
    return [config_from_mapping(dict(parser[name])) for name in sections]


def _flag_overrides(args) -> dict:
    mapping = {
        "problem": args.problem,
        "case": args.case,
        "M": args.grid_size,
        "method": args.method,
        "strategy": args.strategy,
        "steps": args.steps,
        "splitting": args.splitting,
        "output": args.output,
    }
    return {k: v for k, v in mapping.items() if v is not None}


def _add_experiment_flags(parser):
    parser.add_argument("--problem", choices=PROBLEMS)
    parser.add_argument("--case", type=int, choices=(1, 2))
    parser.add_argument("--grid-size", type=int, metavar="M")
    parser.add_argument("--method", choices=tuple(METHODS))
    parser.add_argument("--strategy", choices=STRATEGIES)
    parser.add_argument("--steps", type=_parse_steps, metavar="N1,N2,...")
    parser.add_argument("--splitting", choices=SPLITTINGS)
    parser.add_argument("--output", "-o", metavar="PATH", help="CSV output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lirkamf", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single experiment")
    run.add_argument("--config", metavar="FILE", help="config file; its first block is used")
    _add_experiment_flags(run)

    sweep = sub.add_parser("sweep", help="run every block of a config file")
    sweep.add_argument("config", metavar="FILE")
    sweep.add_argument("--parallel", action="store_true", help="run blocks in separate processes")
    _add_experiment_flags(sweep)
    return parser


def _emit(rows, output):
    if output:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, fh)
        print(format_summary(rows), end="")
    else:
        write_csv(rows, sys.stdout)
        print(format_summary(rows), end="", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = _flag_overrides(args)
    try:
        if args.command == "run":
            base = load_config_file(args.config)[0] if args.config else ExperimentConfig()
            cfg = config_from_mapping(overrides, base).validate()
            configs = [cfg]
        else:
            configs = [config_from_mapping(overrides, c) for c in load_config_file(args.config)]
    except (ConfigError, OSError, configparser.Error) as exc:
        parser.error(str(exc))

    if args.command == "run":
        rows = run_sweep(configs)
    else:
        rows = run_sweep(configs, parallel=args.parallel)
    output = overrides.get("output") or configs[0].output
    _emit(rows, output)
    return 1 if any(r.get("error_message") for r in rows) else 0


if __name__ == "__main__":
    sys.exit(main())
