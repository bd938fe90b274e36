"""Command-line harness: ``phev-ems run`` and ``phev-ems batch``.

Exit codes: 0 success, 2 usage error or infeasible problem, 3 ADMM hit an
iteration cap.

``report.json`` (``schema_version`` 1)::

    {
      "schema_version": 1,
      "cycle": {"source", "n_steps", "distance_m"},
      "strategies": {
        "<name>": {"status", "fuel_J", "fuel_g", "fuel_with_driveability_J",
                   "driveability_J", "terminal_soc_frac", "switch_count",
                   "wall_time_s", "converged", "iterations", "error"}
      },
      "comparisons": {"fuel_savings_vs_cdcs": {"<name>": ratio or null},
                      "dp_savings_fraction_admm": ratio or null,
                      "switch_ratio_admm_dp": ratio or null,
                      "definitions": {...}}
    }

Ratios whose denominator is below ``1e-9`` are reported as ``null``.
Traces ``trace_<name>.csv`` have one row per time instant ``k = 0..N``; the
controls of the last row are blank because no step starts there.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import admm, baselines, metrics
from .config import CONFIG_ENV, STRATEGIES, Config, ConfigError, load_config
from .cycles import CycleError, DriveCycle, PRESETS, load_cycle, preset_cycle
from .params import ParameterError
from .powertrain import EnergyProblem, InfeasibleProblemError, build_problem

SCHEMA_VERSION = 1
RATIO_FLOOR = 1e-9
EXIT_OK, EXIT_INFEASIBLE, EXIT_NOT_CONVERGED = 0, 2, 3
TRACE_COLUMNS = ("k", "t_s", "p_drv_w", "p_b_w", "sigma", "soc_j", "fuel_cum")
DEFINITIONS = {
    "fuel_savings_vs_cdcs": "(fuel_CDCS - fuel_X) / fuel_CDCS",
    "dp_savings_fraction_admm": "(fuel_CDCS - fuel_ADMM) / (fuel_CDCS - fuel_DP)",
    "switch_ratio_admm_dp": "switch_count_ADMM / switch_count_DP",
}

log = logging.getLogger("phev_ems")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ I/O

def write_atomic(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(x) -> str:
    return repr(float(x))


def trace_csv(problem: EnergyProblem, traj: metrics.Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    n = problem.n_steps
    fuel = np.concatenate([[0.0], traj.fuel_cum_J])
    for k in range(n + 1):
        if k < n:
            controls = [_cell(problem.demand_W[k]), _cell(traj.p_b_W[k]), _cell(traj.sigma[k])]
        else:
            controls = ["", "", ""]
        w.writerow([k, _cell(k * problem.dt_s), *controls, _cell(traj.soc_J[k]), _cell(fuel[k])])
    return buf.getvalue()


def _ratio(num, den):
    if den is None or num is None or not np.isfinite(den) or abs(den) < RATIO_FLOOR:
        return None
    return float(num / den)


# ----------------------------------------------------------------- core

def _strategy_entry(problem, traj, density, error=None, status="ok"):
    if traj is None:
        return {"status": status, "error": error}
    it = None
    if isinstance(traj, admm.Solution):
        it = {"convex": traj.iters_convex, "binary": traj.iters_binary}
    return {
        "status": status,
        "fuel_J": traj.fuel_J,
        "fuel_g": traj.fuel_g(density),
        "fuel_with_driveability_J": traj.objective_J,
        "driveability_J": traj.driveability_J,
        "terminal_soc_frac": float(traj.soc_J[-1] / problem.capacity_J),
        "switch_count": traj.switch_count,
        "wall_time_s": traj.wall_time_s,
        "converged": bool(traj.converged),
        "iterations": it,
        "error": error,
    }


def comparisons(entries: dict) -> dict:
    def fuel(name):
        e = entries.get(name)
        return e.get("fuel_J") if e and e.get("status") == "ok" else None

    f_cdcs = fuel("cdcs")
    savings = {}
    for name in entries:
        f = fuel(name)
        savings[name] = _ratio(f_cdcs - f, f_cdcs) if f is not None and f_cdcs is not None else None
    f_admm, f_dp = fuel("admm"), fuel("dp")
    frac = None
    if None not in (f_cdcs, f_admm, f_dp):
        frac = _ratio(f_cdcs - f_admm, f_cdcs - f_dp)
    sw = None
    if f_admm is not None and f_dp is not None:
        sw = _ratio(entries["admm"]["switch_count"], entries["dp"]["switch_count"])
    return {"fuel_savings_vs_cdcs": savings, "dp_savings_fraction_admm": frac,
            "switch_ratio_admm_dp": sw, "definitions": DEFINITIONS}


def run_pipeline(cycle: DriveCycle, cfg: Config, strategies, out_dir: Path, source: str,
                 trace: bool = False) -> tuple[int, dict]:
    """Solve one cycle with the requested strategies and write its artifacts.

    Returns ``(exit_code, report)``.
    """
    vehicle, pen, grids, run = cfg
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    density = run.fuel_energy_density_J_per_g
    report = {"schema_version": SCHEMA_VERSION,
              "cycle": {"source": source, "n_steps": cycle.n_steps, "distance_m": cycle.distance_m},
              "strategies": {}, "comparisons": None}
    code = EXIT_OK
    try:
        problem = build_problem(cycle, vehicle, **run.problem_kwargs())
    except InfeasibleProblemError as exc:
        report["error"] = f"infeasible problem: {exc}"
        write_atomic(out_dir / "report.json", json.dumps(report, indent=2) + "\n")
        return EXIT_INFEASIBLE, report
    for name in strategies:
        try:
            if name == "admm":
                traj = admm.solve(problem, pen, linear_solves=run.linear_solves, trace=trace)
                if trace:
                    admm.write_history(traj.history, out_dir / "admm_iterations.csv")
                if not traj.converged:
                    code = max(code, EXIT_NOT_CONVERGED) if code != EXIT_INFEASIBLE else code
            elif name == "dp":
                traj = baselines.dp_solve(problem, grids)
            elif name == "cdcs":
                traj = baselines.cdcs(problem)
            else:
                raise UsageError(f"unknown strategy {name!r}")
        except InfeasibleProblemError as exc:
            report["strategies"][name] = _strategy_entry(problem, None, density, error=str(exc), status="infeasible")
            code = EXIT_INFEASIBLE
            continue
        report["strategies"][name] = _strategy_entry(problem, traj, density)
        write_atomic(out_dir / f"trace_{name}.csv", trace_csv(problem, traj))
    report["comparisons"] = comparisons(report["strategies"])
    write_atomic(out_dir / "report.json", json.dumps(report, indent=2) + "\n")
    return code, report


# ------------------------------------------------------------------ CLI

def _parse_strategies(text: str):
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise UsageError("--strategies needs at least one name")
    bad = [s for s in names if s not in STRATEGIES]
    if bad:
        raise UsageError(f"unknown strategy {bad[0]!r}; choose from {', '.join(STRATEGIES)}")
    return names


def _parse_seeds(text: str):
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            seeds.extend(range(int(a), int(b) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="phev-ems", description="PHEV energy management: ADMM, DP and CDCS strategies.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help=f"TOML config file (or set ${CONFIG_ENV})")
        sp.add_argument("--strategies", default=None, help="comma list from admm,dp,cdcs")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    r = sub.add_parser("run", help="solve one cycle")
    common(r)
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--cycle", help="cycle CSV (t_s,v_mps,grade_rad[,p_brake_w])")
    src.add_argument("--synth", choices=PRESETS, help="synthetic preset")
    r.add_argument("--seed", type=int, default=0, help="preset seed")
    r.add_argument("--grade-percent", action="store_true", help="cycle grade column is in percent")
    r.add_argument("--trace", action="store_true", help="write the ADMM iteration CSV")

    b = sub.add_parser("batch", help="solve a preset x seed matrix or a directory of cycles")
    common(b)
    bsrc = b.add_mutually_exclusive_group(required=True)
    bsrc.add_argument("--cycles-dir", help="directory of cycle CSV files")
    bsrc.add_argument("--synth", choices=PRESETS, help="synthetic preset")
    b.add_argument("--seeds", default="0-9", help="seed list for --synth, e.g. 0-9 or 1,4,7")
    b.add_argument("--jobs", type=int, default=1, help="cycles solved in parallel")
    b.add_argument("--bins", type=int, default=10, help="timing histogram bins")
    return p


def _config(args) -> Config:
    path = args.config or os.environ.get(CONFIG_ENV)
    if not path:
        raise UsageError(f"--config is required (or set {CONFIG_ENV})")
    return load_config(path)


def _strategies_for(args, cfg: Config):
    return _parse_strategies(args.strategies) if args.strategies else list(cfg.run.strategies)


def cmd_run(args) -> int:
    cfg = _config(args)
    strategies = _strategies_for(args, cfg)
    if args.cycle:
        cycle = load_cycle(args.cycle, grade_in_percent=args.grade_percent)
        source = str(args.cycle)
    else:
        cycle = preset_cycle(args.synth, args.seed)
        source = f"preset:{args.synth}:seed={args.seed}"
    code, report = run_pipeline(cycle, cfg, strategies, Path(args.out), source, trace=args.trace)
    _print_summary(report)
    return code


def _batch_job(job):
    label, source, cycle_arg, cfg, strategies, out_dir = job
    try:
        if isinstance(cycle_arg, tuple):
            cycle = preset_cycle(*cycle_arg)
        else:
            cycle = load_cycle(cycle_arg)
        code, report = run_pipeline(cycle, cfg, strategies, out_dir, source)
        return label, code, report, None
    except (CycleError, InfeasibleProblemError, ValueError) as exc:
        return label, EXIT_INFEASIBLE, None, f"{type(exc).__name__}: {exc}"


def aggregate(results) -> dict:
    fracs, sw, rows, failures = [], [], [], []
    timings = {}
    for label, code, report, err in results:
        rows.append({"cycle": label, "exit_code": code, "error": err})
        if report is None:
            failures.append(label)
            continue
        comp = report.get("comparisons") or {}
        if comp.get("dp_savings_fraction_admm") is not None:
            fracs.append(comp["dp_savings_fraction_admm"])
        if comp.get("switch_ratio_admm_dp") is not None:
            sw.append(comp["switch_ratio_admm_dp"])
        for name, e in report["strategies"].items():
            if e.get("status") == "ok":
                timings.setdefault(name, []).append(e["wall_time_s"])
        if code != EXIT_OK:
            failures.append(label)

    def stats(v):
        if not v:
            return None
        return {"mean": float(np.mean(v)), "min": float(np.min(v)), "max": float(np.max(v)), "count": len(v)}

    return {
        "schema_version": SCHEMA_VERSION,
        "cycles": rows,
        "failures": failures,
        "dp_savings_fraction_admm": stats(fracs),
        "switch_ratio_admm_dp": stats(sw),
        "wall_time_s": {k: stats(v) for k, v in sorted(timings.items())},
        "definitions": DEFINITIONS,
    }


def timing_histogram_csv(results, bins: int) -> str:
    times = {}
    for _, _, report, _ in results:
        if report is None:
            continue
        for name, e in report["strategies"].items():
            if e.get("status") == "ok":
                times.setdefault(name, []).append(e["wall_time_s"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "bin_lo_s", "bin_hi_s", "count"])
    for name in sorted(times):
        counts, edges = np.histogram(times[name], bins=bins)
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            w.writerow([name, repr(float(lo)), repr(float(hi)), int(c)])
    return buf.getvalue()


def cmd_batch(args) -> int:
    cfg = _config(args)
    strategies = _strategies_for(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    if args.synth:
        for seed in _parse_seeds(args.seeds):
            label = f"{args.synth}_seed{seed}"
            jobs.append((label, f"preset:{args.synth}:seed={seed}", (args.synth, seed), cfg, strategies, out / label))
    else:
        d = Path(args.cycles_dir)
        if not d.is_dir():
            raise UsageError(f"--cycles-dir {d} is not a directory")
        files = sorted(d.glob("*.csv"))
        if not files:
            raise UsageError(f"no .csv cycles in {d}")
        for f in files:
            jobs.append((f.stem, str(f), str(f), cfg, strategies, out / f.stem))
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if args.jobs == 1:
        results = [_batch_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_batch_job, jobs))
    for label, code, _, err in results:
        if err:
            print(f"{label}: {err}", file=sys.stderr)
    agg = aggregate(results)
    write_atomic(out / "aggregate.json", json.dumps(agg, indent=2) + "\n")
    write_atomic(out / "timing_histogram.csv", timing_histogram_csv(results, args.bins))
    frac = agg["dp_savings_fraction_admm"]
    print(f"{len(results)} cycles, {len(agg['failures'])} with failures"
          + (f"; ADMM share of DP savings mean {frac['mean']:.3f}" if frac else ""))
    return EXIT_OK if not agg["failures"] else max(c for _, c, _, _ in results)


def _print_summary(report):
    for name, e in report["strategies"].items():
        if e["status"] != "ok":
            print(f"{name:5s} {e['status']}: {e['error']}")
            continue
        print(f"{name:5s} fuel {e['fuel_g']:9.1f} g  switches {e['switch_count']:4d}  "
              f"SOC_end {100 * e['terminal_soc_frac']:5.2f}%  {e['wall_time_s']:.2f} s"
              + ("" if e["converged"] else "  (NOT CONVERGED)"))
    comp = report.get("comparisons") or {}
    if comp.get("dp_savings_fraction_admm") is not None:
        print(f"ADMM achieves {100 * comp['dp_savings_fraction_admm']:.1f}% of the DP fuel savings over CDCS")
    if report.get("error"):
        print(report["error"])


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return cmd_run(args) if args.command == "run" else cmd_batch(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CycleError as exc:
        print(f"cycle error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InfeasibleProblemError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
