"""``guardforce`` command line: list, run, sweep and validate."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import traceio
from .scenarios import (SWEEP_GRIDS, Scenario, apply_overrides, builtin_scenarios, get_scenario,
                        load_config, parse_value)
from .sim import compute_metrics, run_scenario

log = logging.getLogger("guardforce")

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2
MAX_EXIT = 125
OUT_ENV = "GF_OUT_DIR"


class CliError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    scenario: str | None = None
    config: Path | None = None
    out: Path | None = None
    overrides: tuple[str, ...] = ()
    verbosity: int = 0

    def __post_init__(self):
        if (self.scenario is None) == (self.config is None):
            raise CliError("give exactly one of --scenario and --config")

    def load(self) -> Scenario:
        """Built-in or file scenario with the command-line overrides on top."""
        try:
            s = get_scenario(self.scenario) if self.config is None else load_config(self.config)
        except KeyError as exc:
            raise CliError(exc.args[0]) from None
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}") from None
        except ValueError as exc:
            raise CliError(str(exc)) from None
        try:
            return apply_overrides(s, self.overrides)
        except (ValueError, TypeError) as exc:
            raise CliError(f"bad override: {exc}") from None

    def out_dir(self, name: str) -> Path:
        if self.out is not None:
            return self.out
        return Path(os.environ.get(OUT_ENV, "gf_out")) / name


def _write_run(s: Scenario, out: Path) -> dict:
    """Run one scenario and write ``trace.csv`` and ``metrics.txt`` into ``out``."""
    tr = run_scenario(s)
    m = compute_metrics(tr)
    try:
        out.mkdir(parents=True, exist_ok=True)
        traceio.write_trace(tr, out / "trace.csv")
        (out / "metrics.txt").write_text(
            traceio.dumps_metrics(m, {"scenario": s.name}), encoding="ascii")
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}") from None
    return m.as_dict()


def cmd_run(cfg: RunConfig) -> int:
    s = cfg.load()
    out = cfg.out_dir(s.name)
    m = _write_run(s, out)
    print(f"{s.name}: max force {m['max_force']:.4f} N (limit {s.safety.F_max:g}), "
          f"{m['violations']} violations -> {out}")
    return EXIT_VIOLATION if m["violations"] else EXIT_OK


def _point(args) -> dict:
    s, out = args
    return _write_run(s, out)


def _fmt_value(v) -> str:
    return f"{v:g}" if isinstance(v, float) else str(v)


def cmd_sweep(cfg: RunConfig, key: str, values, jobs: int = 1) -> int:
    values = list(values)
    if not values:
        raise CliError("empty sweep grid")
    base = cfg.load()
    root = cfg.out_dir(base.name + "_sweep")
    points = []
    for v in values:
        try:
            s = apply_overrides(base, [(key, v)])
        except (ValueError, TypeError) as exc:
            raise CliError(f"bad grid point {key}={v!r}: {exc}") from None
        points.append((s, root / f"{key}={_fmt_value(v)}"))
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(points))) as pool:
            rows = list(pool.map(_point, points))
    else:
        rows = [_point(p) for p in points]
    lines = [f"{key}\tsteady_force\tmax_force\tviolations"]
    for v, m in zip(values, rows):
        lines.append(f"{_fmt_value(v)}\t{m['steady_force']:.6g}\t{m['max_force']:.6g}\t{m['violations']}")
    table = "\n".join(lines) + "\n"
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / "sweep.tsv").write_text(table, encoding="ascii")
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}") from None
    sys.stdout.write(table)
    return EXIT_VIOLATION if any(m["violations"] for m in rows) else EXIT_OK


def cmd_validate(names=None, qp_tol: float | None = None) -> int:
    from .validation import CRITERIA, Options, run_all

    unknown = [n for n in (names or []) if n not in CRITERIA]
    if unknown:
        raise CliError(f"unknown criteria {unknown}; choose from {', '.join(CRITERIA)}")
    opts = Options() if qp_tol is None else Options(qp_tol=qp_tol)
    results = run_all(opts, names or None, report=lambda line: print(line, flush=True))
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} criteria passed")
    return min(failed, MAX_EXIT)


def cmd_list() -> int:
    for name, s in builtin_scenarios().items():
        print(f"{name:18s} {s.controller.kind:16s} {s.description}")
    for name, (key, grid) in SWEEP_GRIDS.items():
        print(f"{'':18s} sweep grid for {name}: {key} in {list(grid)}")
    return EXIT_OK


def _add_source(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", help="built-in scenario name (see `guardforce list`)")
    g.add_argument("--config", type=Path, help="scenario file (YAML, schema: 1)")
    p.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV}/<name> or gf_out/<name>)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario value; dotted keys reach nested fields (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guardforce", description="Force-limited compliant control simulator.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list built-in scenarios")

    run = sub.add_parser("run", help="run one scenario and write trace.csv and metrics.txt")
    _add_source(run)

    sw = sub.add_parser("sweep", help="run a scenario over a parameter grid")
    _add_source(sw)
    sw.add_argument("--param", help="parameter to vary (alias or dotted key)")
    sw.add_argument("--values", help="comma-separated grid values")
    sw.add_argument("--jobs", type=int, default=1, help="worker processes")

    val = sub.add_parser("validate", help="run the acceptance suite")
    val.add_argument("--only", action="append", help="run only this criterion (repeatable)")
    val.add_argument("--debug-qp-tol", type=float, default=None,
                     help="solve the QP criterion with this feasibility tolerance")
    return p


def _sweep_grid(args, cfg: RunConfig):
    if args.param is None:
        if args.scenario in SWEEP_GRIDS and args.values is None:
            return SWEEP_GRIDS[args.scenario]
        raise CliError("--param is required unless the scenario has a built-in grid")
    if args.values is None:
        raise CliError("--values is required with --param")
    values = [parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
    return args.param, values


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(message)s")
    try:
        if args.command == "list":
            return cmd_list()
        if args.command == "validate":
            return cmd_validate(args.only, args.debug_qp_tol)
        cfg = RunConfig(args.scenario, args.config, args.out, tuple(args.overrides), args.verbose)
        if args.command == "run":
            return cmd_run(cfg)
        key, values = _sweep_grid(args, cfg)
        if args.jobs < 1:
            raise CliError("--jobs must be at least 1")
        return cmd_sweep(cfg, key, values, args.jobs)
    except CliError as exc:
        print(f"guardforce: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
