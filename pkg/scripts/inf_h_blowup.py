"""Planner search size of ours against the full-horizon planner on many simultaneous tasks.

The full-horizon run is cut after its first planning round unless --full is
given; that round is the one that faces every released task.
"""

import argparse

from teamplan import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="scenarios/dense.json")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/blowup")
    ap.add_argument("--full", action="store_true", help="simulate the full-horizon run to the end")
    args = ap.parse_args()
    ours = cli.run(args.scenario, "ours", args.seed, f"{args.out}/ours")
    cut = None if args.full else {"sim.max_time": 0.1}
    full = cli.run(args.scenario, "inf_h", args.seed, f"{args.out}/inf_h", overrides=cut)
    a, b = ours.summary, full.summary
    print(f"ours:  nodes max={a['plan_nodes_max']} plan time max={ours.timing['plan_time_max_s']:.2f}s")
    print(f"inf_h: nodes max={b['plan_nodes_max']} plan time max={full.timing['plan_time_max_s']:.2f}s "
          f"budget hits={b['plan_budget_hits']}")
    print(f"ratio {b['plan_nodes_max'] / max(a['plan_nodes_max'], 1):.1f}x")


if __name__ == "__main__":
    main()
