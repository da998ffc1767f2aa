"""Command-line front end: batch sweeps, error budgets and reference values."""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import traceback

import numpy as np

from .bounds import budget, constants, select_parameters
from .config import ConfigError, RunConfig, load_config, model_id
from .errors import BudgetExceeded, InfeasibleError, ParameterError
from .numkit import derive_seed
from .oracle import mc_terminal, picard_mc
from .sde_sim import LANE_PATHS, dump_paths_csv, simulate_paths
from .splitting import solve

CSV_COLUMNS = ("d", "method", "mean_u0", "std_u0", "mean_runtime_s", "mean_evals")


def _methods(cfg: RunConfig):
    return ("random", "deterministic") if cfg.method == "both" else (cfg.method,)


def run_seed(cfg: RunConfig, d: int, r: int) -> int:
    return derive_seed(cfg.seed, (model_id(cfg.model.preset), d, r))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _summary(d, method, records) -> dict:
    ok = [r for r in records if "error" not in r]
    if not ok:
        nan = float("nan")
        return dict(d=d, method=method, mean_u0=nan, std_u0=nan, mean_runtime_s=nan, mean_evals=nan)
    u = np.array([r["u0"] for r in ok])
    return dict(
        d=d,
        method=method,
        mean_u0=float(np.mean(u)),
        std_u0=float(np.std(u, ddof=1)) if len(u) > 1 else 0.0,
        mean_runtime_s=float(np.mean([r["runtime_s"] for r in ok])),
        mean_evals=float(np.mean([r["eval_count"] for r in ok])),
    )


def _one_run(cfg: RunConfig, problem, d, method, r, out_dir):
    seed = run_seed(cfg, d, r)
    rec = {"d": d, "method": method, "run": r, "seed": seed}
    t0 = time.perf_counter()
    try:
        sol = solve(problem, cfg.splitting_config(method, seed))
    except Exception as exc:  # recorded, sweep continues
        rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["traceback"] = traceback.format_exc()
        return rec
    rec["runtime_s"] = time.perf_counter() - t0
    rec["u0"] = sol.u0
    rec["eval_count"] = sol.diagnostics["eval_count"]
    rec["diagnostics"] = sol.diagnostics
    if cfg.save_nets:
        rec["nets"] = sol.to_dict(include_nets=True)["nets"]
    if cfg.dump_paths and method == "random" and d <= 16:
        batch = simulate_paths(problem, cfg.euler_config(), seed, lane=(LANE_PATHS, 0))
        with open(os.path.join(out_dir, "paths", f"d{d}_r{r}.csv"), "w", encoding="utf-8", newline="") as fh:
            dump_paths_csv(batch, fh)
    return rec


def run_sweep(cfg: RunConfig, out_dir: str, log=print) -> tuple[list, bool]:
    """Execute every (d, method, run); returns summary rows and an all-ok flag."""
    if cfg.model is None:
        raise ConfigError("config has no 'model' section")
    os.makedirs(os.path.join(out_dir, "runs"), exist_ok=True)
    if cfg.dump_paths:
        os.makedirs(os.path.join(out_dir, "paths"), exist_ok=True)
    csv_path = os.path.join(out_dir, "results.csv")
    rows, all_ok = [], True
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        fh.flush()
        for d in cfg.dims:
            try:
                problem = cfg.problem(d)
            except (ParameterError, ConfigError) as exc:
                log(f"d={d}: cannot build model: {exc}", file=sys.stderr)
                all_ok = False
                continue
            for method in _methods(cfg):
                records = []
                for r in range(cfg.runs):
                    rec = _one_run(cfg, problem, d, method, r, out_dir)
                    if "error" in rec:
                        all_ok = False
                        log(f"d={d} {method} run {r}: {rec['error']}", file=sys.stderr)
                    with open(os.path.join(out_dir, "runs", f"d{d}_{method}_r{r}.json"), "w",
                              encoding="utf-8") as jf:
                        json.dump(rec, jf, indent=1, default=float)
                    records.append(rec)
                row = _summary(d, method, records)
                rows.append(row)
                w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
                fh.flush()
                log(f"d={d} {method}: u0 = {row['mean_u0']:.6g} +- {row['std_u0']:.3g} "
                    f"({row['mean_runtime_s']:.3g} s/run)")
    return rows, all_ok


def _bounds_report(cfg: RunConfig) -> dict:
    params = cfg.theory_params()
    k = constants(params)
    out = {"constants": k.as_dict(), "log_constants": k.log_dict()}
    if cfg.budget is not None:
        out["budget"] = budget(params, **cfg.budget.model_dump()).as_dict()
    if cfg.select is not None:
        out["selected"] = select_parameters(params, cfg.select.epsilon_target, cfg.select.K).as_dict()
    return out


def _bounds_csv(report: dict, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("section", "name", "value", "log_value"))
    for name, v in report["constants"].items():
        w.writerow(("constants", name, _fmt(v), _fmt(report["log_constants"][name])))
    for section in ("budget", "selected"):
        for name, v in report.get(section, {}).items():
            lv = math.log(v) if isinstance(v, (int, float)) and v > 0 else float("nan")
            w.writerow((section, name, _fmt(v), _fmt(lv)))


def _oracle_report(cfg: RunConfig) -> dict:
    o = cfg.oracle
    kind = o.kind if o else "mc_terminal"
    d = o.d if o and o.d is not None else cfg.dims[0]
    problem = cfg.problem(d)
    ocfg = cfg.oracle_config()
    if kind == "picard":
        res = picard_mc(problem, ocfg)
        return {"kind": kind, "d": d, "estimate": res["u0_estimate"], "stderr": res["stderr"],
                "evals": res["evals"], "iterates": res["iterates"]}
    res = mc_terminal(problem, ocfg)
    return {"kind": kind, "d": d, "estimate": res["mean"], "stderr": res["stderr"], "evals": res["evals"],
            "samples": res["samples"]}


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jumpsplit", description="Deep splitting solvers for semilinear PIDEs.")
    sub = p.add_subparsers(dest="command", metavar="{run,bounds,oracle}")
    r = sub.add_parser("run", help="run a (dimension x method x repetition) sweep")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (overrides the config)")
    r.add_argument("--dump-paths", action="store_true", help="write path CSVs for d <= 16")
    r.add_argument("--quiet", action="store_true")
    b = sub.add_parser("bounds", help="print error-budget constants and selections")
    b.add_argument("--config", required=True)
    b.add_argument("--format", choices=("json", "csv"), default="json")
    o = sub.add_parser("oracle", help="reference value by Monte Carlo or nested Picard")
    o.add_argument("--config", required=True)
    o.add_argument("--out", default=None, help="also write the JSON to this file")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"jumpsplit: {exc}", file=sys.stderr)
        return 2

    if args.command == "run":
        out_dir = args.out or cfg.output
        if args.dump_paths:
            cfg = cfg.model_copy(update={"dump_paths": True})
        log = (lambda *a, **k: None) if args.quiet else print
        try:
            _, ok = run_sweep(cfg, out_dir, log=log)
        except ConfigError as exc:
            print(f"jumpsplit: {exc}", file=sys.stderr)
            return 2
        return 0 if ok else 1

    try:
        if args.command == "bounds":
            report = _bounds_report(cfg)
            if args.format == "csv":
                _bounds_csv(report, sys.stdout)
            else:
                json.dump(report, sys.stdout, indent=1, default=_json_default)
                sys.stdout.write("\n")
            return 0
        report = _oracle_report(cfg)
    except (ConfigError, ParameterError, InfeasibleError, BudgetExceeded) as exc:
        print(f"jumpsplit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    text = json.dumps(report, indent=1, default=_json_default)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
