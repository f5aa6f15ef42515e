"""Success rate of ours under random agent failures, with spare roster capacity."""

import argparse

from teamplan import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="scenarios/scaled.json")
    ap.add_argument("--seeds", default="0..19")
    ap.add_argument("--alphas", default="0,0.05,0.1")
    ap.add_argument("--redundancy", type=float, default=0.5)
    ap.add_argument("--out", default="runs/failures")
    args = ap.parse_args()
    rows = cli.sweep(args.scenario, ["ours"], cli.parse_seeds(args.seeds), args.out,
                     overrides={"planner.redundancy": args.redundancy},
                     alphas=[float(a) for a in args.alphas.split(",")])
    for r in rows:
        print(f"alpha={r['alpha']:<5g} success={r['success_rate']:.2f} resp={r['resp_time_s']}")


if __name__ == "__main__":
    main()
