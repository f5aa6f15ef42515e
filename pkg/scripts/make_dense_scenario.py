"""Write scenarios/dense.json: one mission of 14 independent delivery tasks released at once."""

import argparse
import json
from pathlib import Path

import numpy as np

from teamplan.scenario import load_scenario, scenario_to_dict


def dense_mission(n_tasks: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    tasks = []
    for k in range(n_tasks):
        x0 = round(float(rng.uniform(0, 26)), 2)
        y0 = round(float(rng.uniform(0, 21)), 2)
        subs = []
        for i in range(int(rng.integers(2, 4))):
            loc = [round(x0 + float(rng.uniform(0.3, 3.7)), 2), round(y0 + float(rng.uniform(0.3, 3.7)), 2)]
            subs.append({"id": i, "n": int(rng.integers(1, 3)),
                         "action": ("deliver", "perceive")[int(rng.integers(2))], "location": loc})
        tasks.append({"id": 101 + k, "region": [x0, y0, x0 + 4.0, y0 + 4.0], "kind": "static_known",
                      "subtasks": subs,
                      "duration_params": {"d0": round(float(rng.uniform(1.5, 3.0)), 2), "n_sat": 4}})
    return {"id": 1, "release_time": 0.0, "tasks": tasks, "precedence": [], "concurrence": []}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--base", default="scenarios/scaled.json")
    ap.add_argument("--tasks", type=int, default=14)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--out", default="scenarios/dense.json")
    args = ap.parse_args()
    d = scenario_to_dict(load_scenario(args.base))
    d["name"] = "dense"
    d["generator"] = None
    d["missions"] = [dense_mission(args.tasks, args.seed)]
    Path(args.out).write_text(json.dumps(d, indent=2) + "\n")
    load_scenario(args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
