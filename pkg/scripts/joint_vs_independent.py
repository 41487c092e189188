"""Joint training over all anchors against one independent policy per budget, at equal trajectory counts.

    python3 scripts/joint_vs_independent.py --seeds 0 1 2 3 4 --iters 2000
"""

import argparse
from dataclasses import replace

from pnag.experiments import REDUCED_PIPELINE, joint_vs_independent, make_dataset, run_pipeline
from pnag.oracle import SyntheticOracle


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--iters", type=int, default=2000, help="joint iterations; each samples K trajectories")
    p.add_argument("--out", default="joint_vs_independent.csv")
    args = p.parse_args()

    oracle = SyntheticOracle(REDUCED_PIPELINE.space)
    lines = ["seed,budget_ms,joint_accuracy_under_budget,independent_accuracy_under_budget"]
    wins = 0
    for s in args.seeds:
        pc = replace(REDUCED_PIPELINE, seed=s)
        res = run_pipeline(pc, oracle, make_dataset(pc, oracle), train_generator_phase=False)
        jv = joint_vs_independent(pc, res.evaluator, oracle, iters=args.iters)
        wins += jv.joint_wins
        lines += [f"{s},{b!r},{j!r},{i!r}" for b, j, i in zip(jv.budgets, jv.joint, jv.independent)]
        print(f"seed {s}: joint {jv.joint.mean():.4f}  independent {jv.independent.mean():.4f}  "
              f"({jv.joint_trajectories} trajectories each)")
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"joint >= independent on {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
