"""``fedsel`` command line: run, sweep, report.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shutil
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import (ExperimentConfig, _read_json, apply_overrides, config_from_dict, config_to_dict,
                     parse_sweep, with_axis_value)
from .errors import ConfigError, FedselError
from .fault_tolerance import DirectoryCheckpointStore
from .orchestrator import run_experiment

log = logging.getLogger("fedsel")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
SWEEP_COLUMNS = ("axis_value", "seed", "final_accuracy", "final_auc", "sim_time_s", "eps_total")


def execute_run(cfg: ExperimentConfig, run_dir) -> dict:
    """Run one experiment and write config.json, reports.jsonl, summary.json and ckpt/ into ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt = run_dir / "ckpt"
    if ckpt.exists():
        shutil.rmtree(ckpt)  # stale checkpoints would poison recovery
    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
    with open(run_dir / "reports.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        def sink(report):
            fh.write(report.to_json() + "\n")
        _, summary, _ = run_experiment(cfg, sink=sink, store=DirectoryCheckpointStore(ckpt))
    with open(run_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def load_run_config(path, overrides=()) -> ExperimentConfig:
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected an object")
    raw = apply_overrides(raw, overrides)
    seed = os.environ.get("FEDSEL_SEED")
    if seed is not None and seed.strip():
        try:
            raw["master_seed"] = int(seed)
        except ValueError:
            raise ConfigError(f"FEDSEL_SEED: expected an integer, got {seed!r}") from None
    return config_from_dict(raw)


def cmd_run(config_path, overrides=()) -> int:
    try:
        cfg = load_run_config(config_path, overrides)
    except ConfigError as exc:
        _report_config_error(exc)
        return EXIT_CONFIG
    try:
        summary = execute_run(cfg, cfg.output_dir)
    except (FedselError, OSError) as exc:
        print(f"fedsel run: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.output_dir}: {cfg.rounds} rounds, accuracy {summary['final_accuracy']:.4f}, "
          f"auc {summary['final_auc']:.4f}, sim time {summary['total_sim_time_s']:.3f}s, "
          f"eps {summary['eps_total']:g}")
    return EXIT_OK


def _value_label(value) -> str:
    return json.dumps(value)


def _write_sweep_csv(path, rows):
    rows = sorted(rows, key=lambda r: (r["axis_value"], r["seed"]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_value_label(r["axis_value"]), r["seed"], repr(r["final_accuracy"]),
                        repr(r["final_auc"]), repr(r["sim_time_s"]), repr(r["eps_total"])])


def cmd_sweep(sweep_path) -> int:
    try:
        spec = parse_sweep(sweep_path)
        jobs = [(v, s, with_axis_value(spec.base, spec.axis, v, s)) for v in spec.values for s in spec.seeds]
    except ConfigError as exc:
        _report_config_error(exc)
        return EXIT_CONFIG
    out = Path(spec.output_dir or spec.base.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    def job(item):
        value, seed, cfg = item
        summary = execute_run(cfg, out / f"{spec.axis}_{_value_label(value)}" / f"seed_{seed}")
        return {"axis_value": value, "seed": seed, "final_accuracy": summary["final_accuracy"],
                "final_auc": summary["final_auc"], "sim_time_s": summary["total_sim_time_s"],
                "eps_total": summary["eps_total"]}

    rows, failure = [], None
    with ThreadPoolExecutor(max_workers=spec.workers) as pool:
        futures = [pool.submit(job, j) for j in jobs]
        for fut in futures:
            try:
                rows.append(fut.result())
            except (FedselError, OSError) as exc:
                failure = failure or exc
    with open(out / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump({"axis": spec.axis, "values": spec.values, "seeds": spec.seeds}, fh, indent=2)
    _write_sweep_csv(out / "sweep.csv", rows)
    if failure is not None:
        print(f"fedsel sweep: child run failed: {failure}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{out / 'sweep.csv'}: {len(rows)} rows")
    return EXIT_OK


def _mean_std(xs):
    xs = list(xs)
    return statistics.fmean(xs), (statistics.stdev(xs) if len(xs) > 1 else 0.0)


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _run_label(cfg, differing):
    if differing == ["ft.enabled"]:
        return "With Fault Tolerance" if cfg["ft.enabled"] else "Without Fault Tolerance"
    return ", ".join(f"{k}={cfg[k]}" for k in differing)


def render_report(directory) -> str:
    """Markdown table comparing the runs (or sweep values) found under ``directory``."""
    d = Path(directory)
    if not d.is_dir():
        raise FedselError(f"{d}: not a directory")
    header = "| Configuration | Accuracy (%) | AUC-ROC | Sim Time (s) |\n|---|---|---|---|\n"
    sweep_csv = d / "sweep.csv"
    if sweep_csv.is_file():
        axis = "value"
        if (d / "sweep.json").is_file():
            axis = json.loads((d / "sweep.json").read_text())["axis"]
        groups: dict = {}
        with open(sweep_csv, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != SWEEP_COLUMNS:
                raise FedselError(f"{sweep_csv}: unexpected header")
            for row in reader:
                groups.setdefault(json.loads(row["axis_value"]), []).append(row)
        if not groups:
            raise FedselError(f"{sweep_csv}: no rows")
        lines = []
        for value in sorted(groups):
            rs = groups[value]
            acc = _mean_std(100 * float(r["final_accuracy"]) for r in rs)
            auc = _mean_std(float(r["final_auc"]) for r in rs)
            tm = _mean_std(float(r["sim_time_s"]) for r in rs)
            lines.append(f"| {axis}={value} (n={len(rs)}) | {acc[0]:.2f} ± {acc[1]:.2f} | "
                         f"{auc[0]:.3f} ± {auc[1]:.3f} | {tm[0]:.2f} ± {tm[1]:.2f} |")
        return header + "\n".join(lines) + "\n"

    run_dirs = [d] if (d / "summary.json").is_file() else sorted(
        p.parent for p in d.glob("*/summary.json"))
    if not run_dirs:
        raise FedselError(f"{d}: no runs or sweep found")
    runs = []
    for rd in run_dirs:
        try:
            summary = json.loads((rd / "summary.json").read_text())
            cfg = _flatten(json.loads((rd / "config.json").read_text())) if (rd / "config.json").is_file() else {}
            runs.append((rd, summary, cfg))
        except (OSError, json.JSONDecodeError) as exc:
            raise FedselError(f"{rd}: unreadable run output ({exc})") from exc
    keys = sorted(set().union(*(c.keys() for _, _, c in runs)) - {"output_dir"})
    differing = [k for k in keys if len({json.dumps(c.get(k)) for _, _, c in runs}) > 1]
    lines = []
    for rd, s, cfg in runs:
        label = _run_label(cfg, differing) if differing and cfg else rd.name
        try:
            lines.append(f"| {label} | {100 * s['final_accuracy']:.2f} | {s['final_auc']:.3f} | "
                         f"{s['total_sim_time_s']:.2f} |")
        except (KeyError, TypeError) as exc:
            raise FedselError(f"{rd}: summary.json is missing {exc}") from exc
    return header + "\n".join(lines) + "\n"


def cmd_report(directory) -> int:
    try:
        table = render_report(directory)
        (Path(directory) / "report.md").write_text(table, encoding="utf-8")
    except (FedselError, OSError, ValueError) as exc:
        print(f"fedsel report: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(table, end="")
    return EXIT_OK


def _report_config_error(exc: ConfigError):
    for problem in exc.problems:
        print(f"config error: {problem}", file=sys.stderr)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fedsel", description="Federated client-selection simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("config")
    p_run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    p_sweep.add_argument("sweep")
    p_report = sub.add_parser("report", help="tabulate run or sweep outputs")
    p_report.add_argument("directory")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.overrides)
    if args.command == "sweep":
        return cmd_sweep(args.sweep)
    return cmd_report(args.directory)


if __name__ == "__main__":
    sys.exit(main())
