"""Train the evaluator and generator, then report budget satisfaction.

    python3 scripts/run_pipeline.py --space default --out runs/default
    python3 scripts/run_pipeline.py --space reduced --out runs/reduced
"""

import argparse
from dataclasses import replace
from pathlib import Path

from pnag.artifacts import derive_seed, write_csv
from pnag.experiments import DEFAULT_PIPELINE, REDUCED_PIPELINE, eval_budgets, midpoint_budgets, run_pipeline, sample_stats
from pnag.oracle import SyntheticOracle, write_jsonl


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--space", choices=("default", "reduced"), default="default")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--generator-iters", type=int)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--out", required=True)
    args = p.parse_args()

    pc = replace(DEFAULT_PIPELINE if args.space == "default" else REDUCED_PIPELINE, seed=args.seed)
    if args.generator_iters:
        pc = replace(pc, generator_iters=args.generator_iters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    oracle = SyntheticOracle(pc.space)
    res = run_pipeline(pc, oracle)
    write_jsonl(out / "data.jsonl", res.records)
    res.evaluator.save(out / "evaluator.json")
    res.generator.save(out / "generator.json")
    (out / "evaluator.log.csv").write_text(res.evaluator_log.to_csv())
    (out / "generator.log.csv").write_text(res.generator_log.to_csv())

    seed = derive_seed(args.seed, "inference")
    for name, budgets in (("test", eval_budgets(res.budget)), ("midpoint", midpoint_budgets(res.budget))):
        stats = sample_stats(res.generator, oracle, pc.device, budgets, n=args.samples, seed=seed)
        write_csv(out / f"budgets_{name}.csv", "budget_report", [s.row() for s in stats])
        for s in stats:
            print(f"{name:8s} B={s.budget:7.2f}  violation {s.violation_rate:.3f}  "
                  f"latency {s.mean_latency:7.2f}  accuracy {s.mean_accuracy:.4f}")


if __name__ == "__main__":
    main()
