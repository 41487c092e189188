"""Command-line entry point: ``pnag <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 validation/configuration error,
4 numerical failure. ``PNAG_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts
from .artifacts import derive_seed, write_csv, write_manifest
from .budget import BudgetDistribution, supported_range
from .dominance import pareto_front, write_frontier_csv
from .errors import NumericalError, PnagError
from .evaluator import EvaluatorModel, train_evaluator
from .generator import GeneratorModel, evaluator_reward, generate, sample_archs, train_generator
from .oracle import (SyntheticOracle, TabularOracle, collect_dataset, dataset_arrays, evaluate_all, fit_predictors,
                     load_oracle_config, load_tabular, oracle_config_dict, write_jsonl)
from .search_space import DEFAULT_SPACE, REDUCED_SPACE, SearchSpaceConfig, encode, enumerate_space

log = logging.getLogger("pnag")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4

SPACE_PRESETS = {"default": DEFAULT_SPACE, "reduced": REDUCED_SPACE}


class UsageError(Exception):
    """Bad flag values that argparse cannot catch by itself."""


# ---------------------------------------------------------------- helpers

def load_space(spec: str) -> SearchSpaceConfig:
    if spec in SPACE_PRESETS:
        return SPACE_PRESETS[spec]
    return SearchSpaceConfig.from_dict(json.loads(Path(spec).read_text(encoding="utf-8")))


def make_oracle(space: SearchSpaceConfig, config: str | None):
    return load_oracle_config(config, space) if config else SyntheticOracle(space)


def require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def parse_budgets(values) -> list[float]:
    """Budgets from repeated ``--budget`` values, each a number or ``lo:hi:n``."""
    out = []
    for v in values:
        if ":" in v:
            lo, hi, n = v.split(":")
            out += list(np.linspace(float(lo), float(hi), int(n)))
        else:
            out.append(float(v))
    return out


def _manifest(args, out, outputs=None, inputs=(), seeds=None):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    write_manifest(out, args.command, sys.argv[1:] if args.argv is None else args.argv, cfg,
                   seeds or {"seed": getattr(args, "seed", 0)}, inputs=inputs, outputs=outputs)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------- commands

def cmd_dataset(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    space = load_space(args.space)
    devices = args.devices.split(",")
    seed = derive_seed(args.seed, "dataset")
    if args.oracle == "tabular":
        if not args.tabular:
            raise UsageError("--oracle tabular needs --tabular PATH")
        records = load_tabular(require_file(args.tabular, "tabular data"), space)
        oracle = TabularOracle(space, records)
    else:
        oracle = make_oracle(space, args.oracle_config)
    records = collect_dataset(space, oracle, devices, args.count, seed, mode=args.mode)
    write_jsonl(args.out, records)
    _manifest(args, args.out, {args.out: "dataset"}, seeds={"seed": args.seed, "dataset": seed})
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def _anchors(args, lat: np.ndarray) -> BudgetDistribution:
    if args.anchors:
        return BudgetDistribution.parse(args.anchors)
    lo, hi = supported_range(lat)
    return BudgetDistribution(lo, hi, args.k)


def cmd_train_evaluator(args) -> int:
    space = load_space(args.space)
    data = require_file(args.data, "dataset")
    records = load_tabular(data, space)
    if len(records) < 2:
        raise UsageError(f"{args.data}: need at least 2 records, got {len(records)}")
    _, lat, _ = dataset_arrays(records, space, args.device)
    budget = _anchors(args, lat)
    seed = derive_seed(args.seed, "evaluator")
    model, hist = train_evaluator(records, space, budget, device=args.device, epochs=args.epochs,
                                  lr_max=args.lr_max, lr_min=args.lr_min, arch_batch=args.arch_batch, seed=seed,
                                  hidden=tuple(args.hidden), use_accuracy=not args.cost_only,
                                  use_predictors=args.use_predictors)
    model.save(args.out)
    log_path = args.log or str(args.out) + ".log.csv"
    Path(log_path).write_text(hist.to_csv(), encoding="utf-8")
    _manifest(args, args.out, {args.out: "evaluator", log_path: "evaluator_log"}, inputs=[data],
              seeds={"seed": args.seed, "evaluator": seed})
    last = hist.rows[-1]
    print(f"anchors {', '.join(f'{a:g}' for a in budget.anchors)}")
    print(f"epoch {last[0]} loss {last[1]:.4f} holdout agreement {last[2]:.4f}")
    return EXIT_OK


def cmd_train_generator(args) -> int:
    ev_path = require_file(args.evaluator, "evaluator model")
    ev = EvaluatorModel.load(ev_path)
    seed = derive_seed(args.seed, "generator")
    iters = 20000 if args.preset == "desk" and args.iters is None else (args.iters or 120000)
    gm = GeneratorModel.init(ev.cfg, ev.budget, seed=seed, hidden=args.hidden)
    gm.meta = {"device": ev.device, "label_rule": ev.label_rule}
    oracle = make_oracle(ev.cfg, args.oracle_config)
    cost = (lambda t: oracle.latency_tokens(t, ev.device)) if ev.device in oracle.devices else None
    gm, hist = train_generator(evaluator_reward(gm, ev), gm, iters=iters, seed=seed, lr=args.lr,
                               entropy_weight=args.entropy, cost_fn=cost, resample=args.resample,
                               interior=args.interior, log_every=args.log_every)
    gm.save(args.out)
    log_path = args.log or str(args.out) + ".log.csv"
    Path(log_path).write_text(hist.to_csv(), encoding="utf-8")
    _manifest(args, args.out, {args.out: "generator", log_path: "generator_log"}, inputs=[ev_path],
              seeds={"seed": args.seed, "generator": seed})
    print(f"trained {iters} iterations; model written to {args.out}")
    return EXIT_OK


def _latency_filter(args, gm: GeneratorModel):
    device = gm.meta.get("device", "mobile")
    if args.filter == "predictor":
        if not args.data:
            raise UsageError("--filter predictor needs --data to fit the latency predictor")
        lat_pred, _ = fit_predictors(load_tabular(require_file(args.data, "dataset"), gm.cfg), gm.cfg,
                                     seed=derive_seed(args.seed, "inference"))
        return lat_pred.latency_fn(device), device
    oracle = make_oracle(gm.cfg, args.oracle_config)
    return (lambda t: oracle.latency_tokens(t, device)), device


def cmd_generate(args) -> int:
    gm = GeneratorModel.load(require_file(args.generator, "generator model"))
    ev = EvaluatorModel.load(require_file(args.evaluator, "evaluator model")) if args.evaluator else None
    budgets = parse_budgets(args.budget)
    gm.check_budgets(np.asarray(budgets))
    t0 = time.perf_counter()
    lat_fn, device = _latency_filter(args, gm)
    oracle = make_oracle(gm.cfg, args.oracle_config)
    seed = derive_seed(args.seed, "inference")
    rows = []
    for i, b in enumerate(budgets):
        arch = generate(gm, b, mode=args.mode, samples=args.samples, latency_fn=lat_fn,
                        score_fn=ev.score_tokens if ev else None, seed=seed + i)
        tok = encode(arch, gm.cfg)[None, :]
        lat = float(oracle.latency_tokens(tok, device)[0]) if device in oracle.devices else float(lat_fn(tok)[0])
        acc = float(oracle.accuracy_tokens(tok)[0])
        rows.append((b, lat, acc, lat <= b, arch.to_json()))
    elapsed = time.perf_counter() - t0
    if args.out:
        write_csv(args.out, "generate", rows)
        _manifest(args, args.out, {args.out: "generate"}, seeds={"seed": args.seed, "inference": seed})
    for b, lat, acc, ok, arch_json in rows:
        if args.json:
            print(json.dumps({"budget_ms": b, "latency_ms": lat, "accuracy": acc, "feasible": bool(ok),
                              "arch": json.loads(arch_json)}))
        else:
            print(f"B={b:g} ms -> latency {lat:.2f} ms, accuracy {acc:.4f}{'' if ok else '  (over budget)'}")
    log.info("generated %d architectures in %.3f s", len(rows), elapsed)
    return EXIT_OK


def cmd_frontier(args) -> int:
    gm = GeneratorModel.load(require_file(args.generator, "generator model"))
    ev = EvaluatorModel.load(require_file(args.evaluator, "evaluator model")) if args.evaluator else None
    oracle = make_oracle(gm.cfg, args.oracle_config)
    from .experiments import generated_points
    budgets = parse_budgets(args.budget) if args.budget else list(np.linspace(gm.budget.b_min, gm.budget.b_max, 20))
    pts = generated_points(gm, oracle, gm.meta.get("device", "mobile"), budgets, ev, mode=args.mode,
                           samples=args.samples, seed=derive_seed(args.seed, "inference"))
    write_frontier_csv(args.out, pts)
    _manifest(args, args.out, {args.out: "frontier"})
    print(f"wrote {len(pts)} generated points to {args.out}")
    return EXIT_OK


def cmd_histogram(args) -> int:
    gm = GeneratorModel.load(require_file(args.generator, "generator model"))
    oracle = make_oracle(gm.cfg, args.oracle_config)
    device = gm.meta.get("device", "mobile")
    rows = []
    seed = derive_seed(args.seed, "inference")
    for i, b in enumerate(parse_budgets(args.budget)):
        toks = sample_archs(gm, b, args.samples, seed=seed + i)
        lat = oracle.latency_tokens(toks, device)
        acc = oracle.accuracy_tokens(toks)
        rows += [(b, j, float(l), float(a), l <= b) for j, (l, a) in enumerate(zip(lat, acc))]
        print(f"B={b:g} ms: violation rate {(lat > b).mean():.3f}, mean latency {lat.mean():.2f} ms")
    write_csv(args.out, "histogram", rows)
    _manifest(args, args.out, {args.out: "histogram"})
    return EXIT_OK


def cmd_oracle_front(args) -> int:
    space = load_space(args.space)
    oracle = make_oracle(space, args.oracle_config)
    pts = oracle.frontier_points(enumerate_space(space, limit=args.limit), args.device)
    front = pareto_front(pts)
    write_frontier_csv(args.out, front)
    _manifest(args, args.out, {args.out: "frontier"})
    print(f"{len(pts)} architectures evaluated, {len(front)} on the frontier")
    return EXIT_OK


def _pipeline_config(args):
    from .experiments import DEFAULT_PIPELINE, REDUCED_PIPELINE, PipelineConfig
    base = REDUCED_PIPELINE if args.space == "reduced" else DEFAULT_PIPELINE
    if args.space not in SPACE_PRESETS:
        base = replace(base, space=load_space(args.space))
    over = {}
    if args.config:
        over.update(json.loads(Path(require_file(args.config, "pipeline config")).read_text(encoding="utf-8")))
        if "space" in over:
            over["space"] = SearchSpaceConfig.from_dict(over["space"])
        for key in ("range_quantiles", "evaluator_hidden"):
            if key in over:
                over[key] = tuple(over[key])
    for name in ("generator_iters", "evaluator_epochs", "dataset_size", "k"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    unknown = set(over) - set(PipelineConfig.__dataclass_fields__)
    if unknown:
        raise UsageError(f"unknown pipeline config fields: {sorted(unknown)}")
    return replace(base, **over)


def cmd_compare(args) -> int:
    from .experiments import compare_methods, reference_point, run_pipeline, summarize
    base = _pipeline_config(args)
    rows, summaries = [], []
    for s in args.seeds:
        pc = replace(base, seed=s)
        oracle = make_oracle(pc.space, args.oracle_config)
        res = run_pipeline(pc, oracle)
        r = compare_methods(pc, res, oracle, n_hist=args.samples)
        rows += r
        summaries += [(m, hv, aub, n) for m, hv, aub, n in summarize(r, reference_point(res.budget, oracle))]
    write_csv(args.out, "compare", [r.row() for r in rows])
    summary_path = str(args.out) + ".summary.csv"
    write_csv(summary_path, "compare_summary", summaries)
    _manifest(args, args.out, {args.out: "compare", summary_path: "compare_summary"})
    for m, hv, aub, n in summaries:
        print(f"{m:6s} hypervolume {hv:.4f}  mean acc-under-budget {aub:.4f}  accuracy evals {n}")
    return EXIT_OK


def cmd_ksweep(args) -> int:
    from .experiments import k_sweep, make_dataset
    base = _pipeline_config(args)
    rows = []
    for s in args.seeds:
        pc = replace(base, seed=s)
        oracle = make_oracle(pc.space, args.oracle_config)
        hv = k_sweep(pc, oracle, make_dataset(pc, oracle), ks=args.ks, interior=args.interior)
        rows += [(k, s, v) for k, v in hv.items()]
        print(f"seed {s}: " + ", ".join(f"K={k} hv={v:.4f}" for k, v in hv.items()))
    write_csv(args.out, "ksweep", rows)
    _manifest(args, args.out, {args.out: "ksweep"})
    return EXIT_OK


def cmd_ablation(args) -> int:
    from .experiments import ablation_no_acc_constraint, make_dataset
    pc = replace(_pipeline_config(args), seed=args.seed)
    oracle = make_oracle(pc.space, args.oracle_config)
    res = ablation_no_acc_constraint(pc, oracle, make_dataset(pc, oracle), n=args.samples)
    rows = []
    for rule, stats in (("full", res.full), ("cost_only", res.cost_only)):
        for st in stats:
            rows.append((rule, st.budget, st.mean_latency, st.mean_accuracy, st.violation_rate))
            print(f"{rule:9s} B={st.budget:g}: latency {st.mean_latency:.2f} ms, accuracy {st.mean_accuracy:.4f}")
    write_csv(args.out, "ablation", rows)
    _manifest(args, args.out, {args.out: "ablation"})
    return EXIT_OK


def cmd_init_config(args) -> int:
    from .experiments import DEFAULT_PIPELINE, REDUCED_PIPELINE
    space = load_space(args.space)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "space.json", space.to_dict())
    _write_json(out / "oracle.json", oracle_config_dict(SyntheticOracle(space)))
    pc = REDUCED_PIPELINE if args.space == "reduced" else DEFAULT_PIPELINE
    pipeline = pc.to_dict()
    pipeline.pop("space")
    _write_json(out / "pipeline.json", pipeline)
    print(f"wrote space.json, oracle.json and pipeline.json to {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    doc = artifacts.read_manifest(require_file(args.manifest, "manifest"))
    # relative paths in the recorded command refer to the original working directory
    os.chdir(doc.get("cwd", "."))
    code = main(doc["argv"])
    if code != EXIT_OK:
        return code
    mismatched = [p for p, meta in doc["outputs"].items() if artifacts.file_digest(p) != meta["sha256"]]
    for p in mismatched:
        print(f"output differs from manifest: {p}", file=sys.stderr)
    if mismatched:
        return EXIT_VALIDATION
    print(f"reproduced {len(doc['outputs'])} output(s) byte-identically")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pnag", description="Budget-conditioned architecture generation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        return sp

    def oracle_flag(sp):
        sp.add_argument("--oracle-config", help="JSON with device profiles and accuracy-model parameters")

    sp = add("dataset", cmd_dataset, "sample architectures and record oracle latency/accuracy as JSONL")
    sp.add_argument("--space", default="default", help="preset name (default, reduced) or space JSON path")
    sp.add_argument("--oracle", choices=("synthetic", "tabular"), default="synthetic")
    sp.add_argument("--tabular", help="JSONL of measured records (for --oracle tabular)")
    oracle_flag(sp)
    sp.add_argument("--devices", default="mobile,cpu,gpu")
    sp.add_argument("--count", type=int, default=16000)
    sp.add_argument("--mode", choices=("set_uniform", "structure_uniform"), default="structure_uniform")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("train-evaluator", cmd_train_evaluator, "train the Pareto-dominance ranking evaluator")
    sp.add_argument("--data", required=True)
    sp.add_argument("--space", default="default")
    sp.add_argument("--device", default="mobile")
    sp.add_argument("--anchors", help="B_min:B_max:K; default is the central 96%% of data latencies")
    sp.add_argument("--k", type=int, default=10, help="anchor count when --anchors is not given")
    sp.add_argument("--epochs", type=int, default=250)
    sp.add_argument("--lr-max", type=float, default=0.1)
    sp.add_argument("--lr-min", type=float, default=1e-3)
    sp.add_argument("--arch-batch", type=int, default=128)
    sp.add_argument("--hidden", type=int, nargs="+", default=[256, 256])
    sp.add_argument("--cost-only", action="store_true", help="drop the accuracy branch of the dominance rule")
    sp.add_argument("--use-predictors", action="store_true", help="label pairs with fitted predictors")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")

    sp = add("train-generator", cmd_train_generator, "train the budget-conditioned generator")
    sp.add_argument("--evaluator", required=True)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--preset", choices=("full", "desk"), default="full", help="desk: 20000 iterations")
    sp.add_argument("--lr", type=float, default=3e-4)
    sp.add_argument("--entropy", type=float, default=1e-3)
    sp.add_argument("--hidden", type=int, default=64)
    sp.add_argument("--resample", action="store_true", help="draw random budgets instead of the fixed anchors")
    sp.add_argument("--interior", action=argparse.BooleanOptionalAction, default=True,
                    help="also train on one random budget between each pair of adjacent anchors (default on)")
    sp.add_argument("--log-every", type=int, default=1000)
    oracle_flag(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log")

    sp = add("generate", cmd_generate, "emit architectures for one or more budgets")
    sp.add_argument("--generator", required=True)
    sp.add_argument("--evaluator", help="score samples with this evaluator (default: policy log-probability)")
    sp.add_argument("--budget", action="append", required=True, help="ms; repeatable, or lo:hi:n")
    sp.add_argument("--mode", choices=("sample_best", "greedy"), default="sample_best")
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--filter", choices=("oracle", "predictor"), default="oracle")
    sp.add_argument("--data", help="dataset for --filter predictor")
    oracle_flag(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--out")

    sp = add("frontier", cmd_frontier, "sweep budgets and emit the generated frontier CSV")
    sp.add_argument("--generator", required=True)
    sp.add_argument("--evaluator")
    sp.add_argument("--budget", action="append")
    sp.add_argument("--mode", choices=("sample_best", "greedy"), default="sample_best")
    sp.add_argument("--samples", type=int, default=64)
    oracle_flag(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("histogram", cmd_histogram, "latencies of policy samples at given budgets")
    sp.add_argument("--generator", required=True)
    sp.add_argument("--budget", action="append", required=True)
    sp.add_argument("--samples", type=int, default=1000)
    oracle_flag(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("oracle-front", cmd_oracle_front, "brute-force Pareto frontier of an enumerable space")
    sp.add_argument("--space", default="reduced")
    sp.add_argument("--device", default="mobile")
    sp.add_argument("--limit", type=int, default=10**6)
    oracle_flag(sp)
    sp.add_argument("--out", required=True)

    def experiment(sp):
        sp.add_argument("--space", default="reduced")
        sp.add_argument("--config", help="pipeline config JSON (see init-config)")
        oracle_flag(sp)
        sp.add_argument("--generator-iters", type=int)
        sp.add_argument("--evaluator-epochs", type=int)
        sp.add_argument("--dataset-size", type=int)
        sp.add_argument("--out", required=True)

    sp = add("compare", cmd_compare, "PNAG vs EVO vs NAS-MO at equal accuracy-evaluation budgets")
    experiment(sp)
    sp.add_argument("--seeds", type=int, nargs="+", default=[0])
    sp.add_argument("--samples", type=int, default=1000)

    sp = add("ksweep", cmd_ksweep, "frontier hypervolume as a function of the anchor count K")
    experiment(sp)
    sp.add_argument("--ks", type=int, nargs="+", default=[1, 2, 5, 10])
    sp.add_argument("--interior", action="store_true",
                    help="also train on budgets between anchors (off by default: it masks the effect of K)")
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])

    sp = add("ablation", cmd_ablation, "full dominance labels vs cost-only labels")
    experiment(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--k", type=int)

    sp = add("init-config", cmd_init_config, "write default space, oracle and pipeline JSON files")
    sp.add_argument("--space", default="default")
    sp.add_argument("--out-dir", required=True)

    sp = add("replay", cmd_replay, "re-run the command recorded in a manifest and verify its outputs")
    sp.add_argument("manifest")
    return p


def _limit_threads():
    n = os.environ.get("PNAG_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    args.argv = list(argv) if argv is not None else None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    limiter = _limit_threads()
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pnag {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"pnag {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PnagError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"pnag {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
