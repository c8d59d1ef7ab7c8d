"""Command-line front end: ``hrcplan run`` and ``hrcplan validate``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import SCENARIO_IDS, ConfigError, SimConfig, apply_overrides, load_config
from .sim import TrialMetrics, build_modules, run_trial

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRIAL_FAILED = 3
EXIT_IO = 4

SUMMARY_FIELDS = TrialMetrics.CSV_FIELDS + ("plan_times_s",)


def parse_seeds(text: str) -> list[int]:
    """``"0-19"``, ``"1,4,7"`` or a mix such as ``"0-2,10"``; seeds are non-negative."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        a = int(lo)
        b = int(hi) if sep else a
        if b < a:
            raise ValueError(f"empty seed range {part!r}")
        seeds.extend(range(a, b + 1))
    if not seeds:
        raise ValueError("no seeds given")
    return seeds


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hrcplan", description="Forecast-driven replanning simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run seeded trials and write traces plus a summary")
    run.add_argument("--config", help="YAML config (default: bundled default)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seeds", help='seed list, e.g. "0-19" or "3,5,8"')
    run.add_argument("--scenario", help="comma-separated scenario ids (default: the config's)")
    run.add_argument("--tau", type=float, help="risk threshold override")
    run.add_argument("--dth", type=float, help="influence radius override (m)")
    run.add_argument("--walk-speed", type=float, help="walking speed override (m/s)")
    run.add_argument("--trials", type=int, help="trial count when no seed list is given")
    run.add_argument("--quiet", action="store_true", help="suppress per-trial lines and the table")

    val = sub.add_parser("validate", help="check a config file without running anything")
    val.add_argument("config", nargs="?", help="YAML config (default: bundled default)")
    return p


# ---------------------------------------------------------------------------
# aggregates
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_row(m: TrialMetrics) -> dict:
    row = {k: _fmt(v) for k, v in m.row().items()}
    row["plan_times_s"] = ";".join(repr(float(x)) for x in m.plan_times_s)
    return row


def read_summary(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate(rows: Sequence[dict]) -> list[dict]:
    """Per-scenario table computed from summary rows (strings, as read from CSV)."""
    out = []
    for sid in sorted({r["scenario"] for r in rows}):
        rs = [r for r in rows if r["scenario"] == sid]
        mins = np.array([float(r["min_clearance_mm"]) for r in rs])
        intr = [r for r in rs if r["intrusion"] == "1"]
        times = np.array([float(t) for r in rs for t in r["plan_times_s"].split(";") if t])
        used = [float(r["nodes_used_mean"]) for r in rs if int(r["plan_successes"]) > 0]
        expl = [float(r["nodes_explored_mean"]) for r in rs if int(r["plan_attempts"]) > int(r["plan_blocked"])]
        attempts = sum(int(r["plan_attempts"]) for r in rs)
        succ = sum(int(r["plan_successes"]) for r in rs)
        out.append({
            "scenario": sid,
            "trials": len(rs),
            "completed_pct": 100.0 * sum(r["task_completed"] == "1" for r in rs) / len(rs),
            "min_clearance_mm": float(mins.min()),
            "mean_clearance_mm": float(mins.mean()),
            "intrusions": len(intr),
            "coverage_pct": 100.0 * sum(r["covered"] == "1" for r in intr) / len(intr) if intr else float("nan"),
            "replans": sum(int(r["replans_triggered"]) for r in rs),
            "plan_success_pct": 100.0 * succ / attempts if attempts else float("nan"),
            "plan_p50_s": float(np.median(times)) if len(times) else float("nan"),
            "plan_p95_s": float(np.quantile(times, 0.95)) if len(times) else float("nan"),
            "plan_max_s": float(times.max()) if len(times) else float("nan"),
            "tick_p95_ms": max(float(r["tick_time_p95_ms"]) for r in rs),
            "nodes_explored": float(np.mean(expl)) if expl else float("nan"),
            "nodes_used": float(np.mean(used)) if used else float("nan"),
            "hold_mean_s": float(np.mean([float(r["hold_time_s"]) for r in rs])),
        })
    return out


_COLUMNS = (
    ("scenario", "{}"), ("trials", "{}"), ("completed_pct", "{:.0f}"), ("min_clearance_mm", "{:.1f}"),
    ("mean_clearance_mm", "{:.1f}"), ("intrusions", "{}"), ("coverage_pct", "{:.0f}"), ("replans", "{}"),
    ("plan_success_pct", "{:.1f}"), ("plan_p50_s", "{:.3f}"), ("plan_p95_s", "{:.3f}"), ("plan_max_s", "{:.3f}"),
    ("tick_p95_ms", "{:.1f}"),
    ("nodes_explored", "{:.1f}"), ("nodes_used", "{:.1f}"), ("hold_mean_s", "{:.2f}"),
)


def format_table(agg: Sequence[dict]) -> str:
    cells = [[name for name, _ in _COLUMNS]]
    for a in agg:
        cells.append([fmt.format(a[name]) for name, fmt in _COLUMNS])
    widths = [max(len(row[i]) for row in cells) for i in range(len(_COLUMNS))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _load(path: Optional[str]) -> SimConfig:
    if path is not None and not Path(path).is_file():
        raise FileNotFoundError(path)
    return load_config(path)


def cmd_validate(args) -> int:
    try:
        cfg = _load(args.config)
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print("invalid config:")
        for issue in exc.issues:
            print(f"  - {issue}")
        return EXIT_CONFIG
    print(f"valid: scenario {cfg.scenario.id}, {len(cfg.seed_list())} trial(s), tau={cfg.apf.tau}, d_th={cfg.apf.d_th}")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config)
        seeds = parse_seeds(args.seeds) if args.seeds else None
        cfg = apply_overrides(cfg, tau=args.tau, d_th=args.dth, walk_speed=args.walk_speed,
                              trials=args.trials, seeds=seeds)
        ids = [s.strip() for s in args.scenario.split(",")] if args.scenario else [cfg.scenario.id]
        bad = [s for s in ids if s not in SCENARIO_IDS]
        if bad:
            raise ConfigError([f"unknown scenario ids {bad}"])
        configs = [cfg.with_scenario(s) for s in ids]
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print("invalid config:", file=sys.stderr)
        for issue in exc.issues:
            print(f"  - {issue}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    try:
        (out / "traces").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_IO

    metrics: list[TrialMetrics] = []
    t0 = time.perf_counter()
    try:
        for c in configs:
            modules = build_modules(c)
            for seed in c.seed_list():
                res = run_trial(c, seed, modules)
                m = res.metrics
                write_trace(out / "traces" / f"{c.scenario.id}_seed{seed}.jsonl", res.trace)
                metrics.append(m)
                if not args.quiet:
                    print(f"{m.scenario} seed {seed:3d}: completed={m.task_completed} "
                          f"min_clearance={m.min_clearance_mm:.1f} mm replans={m.replans_triggered} "
                          f"hold={m.hold_time_s:.1f} s")
        summary = out / "summary.csv"
        with open(summary, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
            w.writeheader()
            for m in metrics:
                w.writerow(summary_row(m))
        agg = aggregate(read_summary(summary))
    except OSError as exc:
        print(f"error: writing outputs failed: {exc}", file=sys.stderr)
        return EXIT_IO

    if not args.quiet:
        print()
        print(format_table(agg))
        print(f"\n{len(metrics)} trial(s) in {time.perf_counter() - t0:.1f} s; outputs in {out}")
    failed = [m for m in metrics if not m.task_completed]
    if failed:
        print(f"{len(failed)} trial(s) did not complete the task", file=sys.stderr)
        return EXIT_TRIAL_FAILED
    return EXIT_OK


def write_trace(path: Path, trace: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args)
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
