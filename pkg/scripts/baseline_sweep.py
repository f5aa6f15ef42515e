"""Compare ours against the one-task-per-subteam baseline over a seed sweep.

Writes runs/baseline/summary.csv and prints per-seed response and
navigating-agent counts for both methods.
"""

import argparse
import json
from pathlib import Path

from teamplan import cli


def _fmt(x):
    return "failed" if x is None else f"{x:.1f}"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="scenarios/scaled.json")
    ap.add_argument("--seeds", default="0..19")
    ap.add_argument("--out", default="runs/baseline")
    args = ap.parse_args()
    seeds = cli.parse_seeds(args.seeds)
    cli.sweep(args.scenario, ["ours", "greedy"], seeds, args.out)
    reports = json.loads((Path(args.out) / "reports.json").read_text())
    by_key = {(r["method"], r["seed"]): r["summary"] for r in reports}
    resp = travel = 0
    for seed in seeds:
        ours, greedy = by_key["ours", seed], by_key["greedy", seed]
        resp += ours["resp_time_s"] is not None and (greedy["resp_time_s"] is None
                                                     or ours["resp_time_s"] <= greedy["resp_time_s"])
        travel += greedy["agents_T"] > ours["agents_T"]
        print(f"seed {seed:3d}  resp ours={_fmt(ours['resp_time_s'])} greedy={_fmt(greedy['resp_time_s'])}  "
              f"T ours={ours['agents_T']:.2f} greedy={greedy['agents_T']:.2f}")
    print(f"ours responds no later in {resp}/{len(seeds)} seeds; greedy navigates more in {travel}/{len(seeds)}")


if __name__ == "__main__":
    main()
