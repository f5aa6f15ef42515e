"""Command-line runner: single runs and seed sweeps with an aggregate CSV.

    teamplan run --scenario scenarios/scaled.json --method ours --seed 0 --out runs/x
    teamplan sweep --scenario scenarios/scaled.json --methods ours,greedy --seeds 0..19 --out runs/sweep

Any scalar scenario field can be overridden with a flag named after its JSON
path, e.g. ``--sim.alpha 0.1`` or ``--planner.horizon=4``. Sweeps use
``TEAMPLAN_WORKERS`` worker processes (default 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .scenario import Scenario, ScenarioError, load_scenario
from .sim import METHODS, run_scenario, write_outputs

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAILED = 3

WORKERS_ENV = "TEAMPLAN_WORKERS"

CSV_COLUMNS = ("method", "alpha", "runs", "failed_runs", "success_rate", "resp_time_s", "resp_time_max_s",
               "plan_time_avg_s", "plan_time_max_s", "agents_T", "agents_W", "agents_X",
               "plan_nodes_max", "plan_budget_hits")


@dataclass
class RunReport:
    scenario_hash: str
    method: str
    seed: int
    summary: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None or not self.summary.get("success", False)

    def to_json(self) -> dict:
        """Reproducible part of the report (wall-clock timing excluded)."""
        return {"scenario_hash": self.scenario_hash, "method": self.method, "seed": self.seed,
                "summary": self.summary, "error": self.error}


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(extra: Sequence[str]) -> dict:
    """``["--sim.alpha", "0.1", "--planner.horizon=4"]`` -> ``{"sim.alpha": 0.1, "planner.horizon": 4}``."""
    out = {}
    items = list(extra)
    i = 0
    while i < len(items):
        tok = items[i]
        if not tok.startswith("--") or "." not in tok:
            raise ScenarioError(f"unrecognised argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(items):
                raise ScenarioError(f"missing value for {tok}")
            i += 1
            val = items[i]
        out[key] = _coerce(val)
        i += 1
    return out


def parse_seeds(text: str) -> list[int]:
    """``"0..19"`` (inclusive), ``"3"`` or ``"1,4,7"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..", 1)
            seeds.extend(range(int(a), int(b) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("at least one seed is required")
    return seeds


def _prepare(scenario: Scenario | str | Path, overrides: dict | None) -> Scenario:
    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario)
    return sc.with_overrides(**overrides) if overrides else sc


def run(scenario: Scenario | str | Path, method: str, seed: int, out_dir: str | Path | None = None,
        overrides: dict | None = None) -> RunReport:
    """Simulate one (scenario, method, seed) and write its files to ``out_dir``."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    sc = _prepare(scenario, overrides)
    log = run_scenario(sc, method, seed)
    if out_dir is not None:
        write_outputs(log, out_dir)
    report = RunReport(sc.digest(), method, seed, log.summary(), log.timing())
    if out_dir is not None:
        (Path(out_dir) / "report.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    return report


def _cell(args) -> RunReport:
    sc, method, seed, out_dir = args
    try:
        return run(sc, method, seed, out_dir)
    except Exception as exc:  # recorded per cell, the sweep goes on
        return RunReport(sc.digest(), method, seed, error=f"{type(exc).__name__}: {exc}")


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return sum(xs) / len(xs) if xs else None


def aggregate(reports: Sequence[RunReport], alpha: float) -> dict[str, dict]:
    """One row per method: means over seeds, maxima where the column is a peak."""
    rows = {}
    for method in sorted({r.method for r in reports}):
        rs = sorted((r for r in reports if r.method == method), key=lambda r: r.seed)
        ok = [r for r in rs if r.error is None]
        resp = [r.summary["resp_time_s"] for r in ok if r.summary["resp_time_s"] is not None]
        rows[method] = {
            "method": method,
            "alpha": alpha,
            "runs": len(rs),
            "failed_runs": sum(r.failed for r in rs),
            "success_rate": sum(not r.failed for r in rs) / len(rs),
            "resp_time_s": _mean(resp),
            "resp_time_max_s": max(resp, default=None),
            "plan_time_avg_s": _mean([r.timing["plan_time_avg_s"] for r in ok]),
            "plan_time_max_s": max((r.timing["plan_time_max_s"] for r in ok), default=None),
            "agents_T": _mean([r.summary["agents_T"] for r in ok]),
            "agents_W": _mean([r.summary["agents_W"] for r in ok]),
            "agents_X": _mean([r.summary["agents_X"] for r in ok]),
            "plan_nodes_max": max((r.summary["plan_nodes_max"] for r in ok), default=None),
            "plan_budget_hits": sum(r.summary["plan_budget_hits"] for r in ok),
        }
    return rows


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def sweep(scenario: Scenario | str | Path, methods: Sequence[str], seeds: Sequence[int],
          out_dir: str | Path | None = None, overrides: dict | None = None,
          alphas: Sequence[float] | None = None, workers: int | None = None) -> list[dict]:
    """Run every (alpha, method, seed) cell and write ``summary.csv`` under ``out_dir``."""
    if not seeds:
        raise ValueError("at least one seed is required")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}")
    base = _prepare(scenario, overrides)
    alphas = list(alphas) if alphas else [base.sim.alpha]
    jobs = []
    for alpha in alphas:
        sc = base.with_overrides(**{"sim.alpha": alpha})
        for method in methods:
            for seed in seeds:
                cell = None
                if out_dir is not None:
                    tag = f"alpha_{alpha:g}/" if len(alphas) > 1 else ""
                    cell = Path(out_dir) / f"{tag}{method}/seed_{seed}"
                jobs.append((sc, method, seed, cell))
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            reports = list(pool.map(_cell, jobs))
    else:
        reports = [_cell(j) for j in jobs]
    rows = []
    for alpha in alphas:
        here = [r for r, j in zip(reports, jobs) if j[0].sim.alpha == alpha]
        agg = aggregate(here, alpha)
        rows.extend(agg[m] for m in methods if m in agg)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for row in rows:
                w.writerow({k: ("" if row[k] is None else row[k]) for k in CSV_COLUMNS})
        (Path(out_dir) / "reports.json").write_text(
            json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True) + "\n")
    return rows


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="teamplan", description="Run missions with a replanning fleet.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="one simulation")
    r.add_argument("--scenario", required=True)
    r.add_argument("--method", default="ours", choices=METHODS)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    s = sub.add_parser("sweep", help="methods x seeds, aggregated into summary.csv")
    s.add_argument("--scenario", required=True)
    s.add_argument("--methods", default="ours,greedy")
    s.add_argument("--seeds", default="0..19")
    s.add_argument("--alphas", default=None, help="comma-separated failure probabilities")
    s.add_argument("--out", required=True)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args, extra = _parser().parse_known_args(argv)
    try:
        overrides = parse_overrides(extra)
        if args.command == "run":
            report = run(args.scenario, args.method, args.seed, args.out, overrides)
            s = report.summary
            print(f"{report.method} seed={report.seed} success={s['success']} "
                  f"resp={s['resp_time_s']} T={s['agents_T']:.3f} nodes_max={s['plan_nodes_max']} "
                  f"budget_hits={s['plan_budget_hits']}")
            return EXIT_FAILED if report.failed else EXIT_OK
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        alphas = [float(a) for a in args.alphas.split(",")] if args.alphas else None
        rows = sweep(args.scenario, methods, parse_seeds(args.seeds), args.out, overrides, alphas)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"teamplan: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for row in rows:
        print(", ".join(f"{k}={row[k]}" for k in CSV_COLUMNS))
    return EXIT_FAILED if any(row["failed_runs"] for row in rows) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
