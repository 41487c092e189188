"""Two-phase training pipeline and the comparison experiments built on it.

Everything here is a thin composition of the library modules; each function
is deterministic given its config and seed.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .artifacts import derive_seed
from .baselines import EvoConfig, MoRewardConfig, evo_search, independent_search, nas_mo_search
from .budget import BudgetDistribution, supported_range
from .dominance import FrontierPoint, hypervolume, pareto_front
from .evaluator import EvaluatorLog, EvaluatorModel, train_evaluator
from .generator import GeneratorLog, GeneratorModel, evaluator_reward, generate, sample_archs, train_generator
from .oracle import CountingOracle, EvaluatedArch, SyntheticOracle, collect_dataset, dataset_arrays
from .search_space import DEFAULT_SPACE, REDUCED_SPACE, Architecture, SearchSpaceConfig, encode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for dataset collection, evaluator and generator training.

    ``b_min``/``b_max`` fix the budget range; when left as None the range is
    the central ``range_quantiles`` of the dataset's latencies.
    """

    space: SearchSpaceConfig = DEFAULT_SPACE
    device: str = "mobile"
    dataset_size: int = 16000
    dataset_mode: str = "structure_uniform"
    k: int = 10
    b_min: float | None = None
    b_max: float | None = None
    range_quantiles: tuple[float, float] = (0.02, 0.98)
    evaluator_epochs: int = 60
    arch_batch: int = 128
    evaluator_hidden: tuple[int, ...] = (256, 256)
    use_accuracy: bool = True
    generator_iters: int = 20000
    generator_lr: float = 3e-4
    entropy_weight: float = 1e-3
    interior_budgets: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["space"] = self.space.to_dict()
        return d


# desk-scale presets for one CPU core; the CLI defaults are the full-scale settings
DEFAULT_PIPELINE = PipelineConfig()
REDUCED_PIPELINE = PipelineConfig(space=REDUCED_SPACE, dataset_size=400, k=5, evaluator_epochs=250,
                                  arch_batch=128)


@dataclass
class PipelineResult:
    config: PipelineConfig
    records: list[EvaluatedArch]
    budget: BudgetDistribution
    evaluator: EvaluatorModel
    evaluator_log: EvaluatorLog
    generator: GeneratorModel | None = None
    generator_log: GeneratorLog | None = None


def make_dataset(pc: PipelineConfig, oracle) -> list[EvaluatedArch]:
    return collect_dataset(pc.space, oracle, [pc.device], pc.dataset_size, derive_seed(pc.seed, "dataset"),
                           mode=pc.dataset_mode)


def budget_for(pc: PipelineConfig, records: Sequence[EvaluatedArch], k: int | None = None) -> BudgetDistribution:
    if pc.b_min is not None and pc.b_max is not None:
        lo, hi = pc.b_min, pc.b_max
    else:
        lat = np.array([r.latency[pc.device] for r in records])
        lo, hi = supported_range(lat, *pc.range_quantiles)
    return BudgetDistribution(lo, hi, pc.k if k is None else k)


def run_pipeline(pc: PipelineConfig, oracle=None, records=None, train_generator_phase: bool = True) -> PipelineResult:
    """Collect triplets, train the evaluator, then the generator."""
    oracle = oracle if oracle is not None else SyntheticOracle(pc.space)
    records = records if records is not None else make_dataset(pc, oracle)
    budget = budget_for(pc, records)
    ev, ev_log = train_evaluator(records, pc.space, budget, device=pc.device, epochs=pc.evaluator_epochs,
                                 arch_batch=pc.arch_batch, seed=derive_seed(pc.seed, "evaluator"),
                                 hidden=pc.evaluator_hidden, use_accuracy=pc.use_accuracy)
    res = PipelineResult(pc, records, budget, ev, ev_log)
    if train_generator_phase:
        res.generator, res.generator_log = fit_generator(pc, ev, oracle)
    return res


def fit_generator(pc: PipelineConfig, evaluator: EvaluatorModel, oracle=None, iters: int | None = None):
    gseed = derive_seed(pc.seed, "generator")
    gm = GeneratorModel.init(pc.space, evaluator.budget, seed=gseed)
    gm.meta = {"device": pc.device, "label_rule": evaluator.label_rule}
    cost = (lambda t: oracle.latency_tokens(t, pc.device)) if oracle is not None else None
    return train_generator(evaluator_reward(gm, evaluator), gm, iters=pc.generator_iters if iters is None else iters,
                           seed=gseed, lr=pc.generator_lr, entropy_weight=pc.entropy_weight, cost_fn=cost,
                           interior=pc.interior_budgets)


# ---------------------------------------------------------------- measurement

def eval_budgets(budget: BudgetDistribution, n: int = 5) -> np.ndarray:
    """``n`` evenly spaced budgets spanning the trained range."""
    return np.linspace(budget.b_min, budget.b_max, n)


def midpoint_budgets(budget: BudgetDistribution, n: int = 5) -> np.ndarray:
    """``n`` budgets halfway between adjacent anchors, spread over the range."""
    a = budget.anchors
    mids = 0.5 * (a[:-1] + a[1:])
    if mids.size <= n:
        return mids
    return mids[np.round(np.linspace(0, mids.size - 1, n)).astype(int)]


def accuracy_under_budget(acc, lat, budget) -> np.ndarray:
    """Oracle accuracy where the budget holds and 0 where it is violated."""
    acc, lat = np.asarray(acc, dtype=float), np.asarray(lat, dtype=float)
    return np.where(lat <= budget, acc, 0.0)


@dataclass
class BudgetStats:
    budget: float
    violation_rate: float
    mean_latency: float
    mean_accuracy: float

    def row(self):
        return (self.budget, self.violation_rate, self.mean_latency, self.mean_accuracy)


def sample_stats(model: GeneratorModel, oracle, device: str, budgets, n: int = 1000, seed: int = 0) -> list[BudgetStats]:
    """Violation rate and mean oracle values of ``n`` policy samples per budget."""
    out = []
    for i, b in enumerate(budgets):
        toks = sample_archs(model, float(b), n, seed=seed + i)
        lat = oracle.latency_tokens(toks, device)
        acc = oracle.accuracy_tokens(toks)
        out.append(BudgetStats(float(b), float((lat > b).mean()), float(lat.mean()), float(acc.mean())))
    return out


def generated_points(model: GeneratorModel, oracle, device: str, budgets, evaluator: EvaluatorModel | None = None,
                     mode: str = "sample_best", samples: int = 64, seed: int = 0) -> list[FrontierPoint]:
    """One generated architecture per budget with its oracle values."""
    lat_fn = lambda t: oracle.latency_tokens(t, device)
    score_fn = evaluator.score_tokens if evaluator is not None else None
    pts = []
    for i, b in enumerate(budgets):
        arch = generate(model, float(b), mode=mode, samples=samples, latency_fn=lat_fn, score_fn=score_fn,
                        seed=seed + i)
        tok = encode(arch, model.cfg)[None, :]
        pts.append(FrontierPoint(arch, float(lat_fn(tok)[0]), float(oracle.accuracy_tokens(tok)[0])))
    return pts


def frontier_hypervolume(points: Sequence[FrontierPoint], ref_latency: float, ref_accuracy: float) -> float:
    inside = [p for p in points if p.latency <= ref_latency and p.accuracy >= ref_accuracy]
    return hypervolume(pareto_front(inside), ref_latency, ref_accuracy) if inside else 0.0


def reference_point(budget: BudgetDistribution, oracle) -> tuple[float, float]:
    """Hypervolume reference: the top of the budget range and the accuracy floor."""
    return float(budget.b_max), float(oracle.acc_params.acc_floor)


# ---------------------------------------------------------------- experiments

@dataclass
class JointVsIndependent:
    budgets: np.ndarray
    joint: np.ndarray  # accuracy-under-budget per budget
    independent: np.ndarray
    joint_trajectories: int
    independent_trajectories: int

    @property
    def joint_wins(self) -> bool:
        return bool(self.joint.mean() >= self.independent.mean())


def joint_vs_independent(pc: PipelineConfig, evaluator: EvaluatorModel, oracle, iters: int,
                         budgets: Sequence[float] | None = None, samples: int = 64) -> JointVsIndependent:
    """One generator over all anchors against one fresh policy per test budget.

    The joint run samples K trajectories per iteration, plus K-1 between the
    anchors when ``pc.interior_budgets`` is set; the independent runs split
    the same total count evenly over the test budgets.
    """
    budget = evaluator.budget
    budgets = np.asarray(eval_budgets(budget) if budgets is None else budgets, dtype=float)
    gm, _ = fit_generator(pc, evaluator, iters=iters)
    joint_pts = generated_points(gm, oracle, pc.device, budgets, evaluator, samples=samples,
                                 seed=derive_seed(pc.seed, "inference"))
    total = iters * (2 * budget.k - 1 if pc.interior_budgets and budget.k > 1 else budget.k)
    per_run = total // budgets.size
    indep_pts = []
    reward = lambda t, b: evaluator.score_tokens(t, b)
    for i, b in enumerate(budgets):
        m, _ = independent_search(reward, pc.space, float(b), iters=per_run,
                                  seed=derive_seed(pc.seed, f"baselines/independent/{i}"),
                                  lr=pc.generator_lr, entropy_weight=pc.entropy_weight)
        indep_pts += generated_points(m, oracle, pc.device, [b], evaluator, samples=samples,
                                      seed=derive_seed(pc.seed, "inference") + i)
    aub = lambda pts: accuracy_under_budget([p.accuracy for p in pts], [p.latency for p in pts], budgets)
    return JointVsIndependent(budgets, aub(joint_pts), aub(indep_pts), total, per_run * budgets.size)


def k_sweep(pc: PipelineConfig, oracle, records, ks: Sequence[int] = (1, 2, 5, 10), n_budgets: int = 20,
            samples: int = 64, interior: bool = False) -> dict[int, float]:
    """Frontier hypervolume of the full pipeline trained with each anchor count.

    The generator trains on the K anchors only unless ``interior`` is set:
    interior draws cover the whole range for every K > 1, which hides the
    effect of the anchor count that the sweep measures.
    """
    out = {}
    full = budget_for(pc, records)
    sweep = np.linspace(full.b_min, full.b_max, n_budgets)
    ref = reference_point(full, oracle)
    for k in ks:
        pk = replace(pc, k=k, b_min=full.b_min, b_max=full.b_max, interior_budgets=interior)
        res = run_pipeline(pk, oracle, records)
        # with K=1 the single anchor sits mid-range, but the range still covers the sweep
        pts = generated_points(res.generator, oracle, pc.device, sweep, res.evaluator, samples=samples,
                               seed=derive_seed(pc.seed, "inference"))
        out[k] = frontier_hypervolume(pts, *ref)
    return out


@dataclass
class AblationResult:
    budgets: np.ndarray
    full: list[BudgetStats]
    cost_only: list[BudgetStats]


def ablation_no_acc_constraint(pc: PipelineConfig, oracle, records, n: int = 1000) -> AblationResult:
    """Full Pareto-dominance labels against cost-only labels, same pipeline otherwise."""
    stats = {}
    budgets = None
    for use_acc in (True, False):
        res = run_pipeline(replace(pc, use_accuracy=use_acc), oracle, records)
        budgets = eval_budgets(res.budget)
        stats[use_acc] = sample_stats(res.generator, oracle, pc.device, budgets, n=n,
                                      seed=derive_seed(pc.seed, "inference"))
    return AblationResult(budgets, stats[True], stats[False])


@dataclass
class CompareRow:
    method: str
    seed: int
    arch: Architecture
    budget: float
    latency: float
    accuracy: float
    violation_rate: float
    evaluations: int

    @property
    def feasible(self) -> bool:
        return self.latency <= self.budget

    def row(self):
        return (self.method, self.seed, self.budget, self.latency, self.accuracy, self.feasible,
                self.violation_rate, self.evaluations)


def compare_methods(pc: PipelineConfig, result: PipelineResult, oracle, budgets=None, n_hist: int = 1000,
                    evo: EvoConfig | None = None, mo_kind: str = "soft_exponent") -> list[CompareRow]:
    """PNAG against EVO and NAS-MO at each budget with equal accuracy-evaluation budgets.

    PNAG is charged for its dataset (one accuracy query per record); each
    per-budget baseline gets that total split evenly over the budgets.
    """
    budgets = np.asarray(eval_budgets(result.budget) if budgets is None else budgets, dtype=float)
    total_evals = len(result.records)
    per_budget = total_evals // budgets.size
    rows: list[CompareRow] = []
    pts = generated_points(result.generator, oracle, pc.device, budgets, result.evaluator,
                           seed=derive_seed(pc.seed, "inference"))
    stats = sample_stats(result.generator, oracle, pc.device, budgets, n=n_hist, seed=derive_seed(pc.seed, "inference"))
    for p, s in zip(pts, stats):
        rows.append(CompareRow("pnag", pc.seed, p.arch, s.budget, p.latency, p.accuracy, s.violation_rate,
                               total_evals // budgets.size))
    pop = min(32 if evo is None else evo.population, max(2, per_budget // 2))
    for i, b in enumerate(budgets):
        ecfg = EvoConfig(population=pop, seed=derive_seed(pc.seed, f"baselines/evo/{i}"))
        counting = CountingOracle(oracle)
        r = evo_search(counting, float(b), ecfg, device=pc.device, max_evaluations=per_budget)
        hist_lat = np.array([h[1] for h in r.history])
        rows.append(CompareRow("evo", pc.seed, r.arch, float(b), r.latency, r.accuracy, float((hist_lat > b).mean()),
                               counting.accuracy_evaluations))
    for i, b in enumerate(budgets):
        counting = CountingOracle(oracle)
        r = nas_mo_search(counting, float(b), MoRewardConfig(kind=mo_kind, target_b=float(b)), iters=per_budget,
                          device=pc.device, seed=derive_seed(pc.seed, f"baselines/nasmo/{i}"))
        s = sample_stats(r.model, oracle, pc.device, [b], n=n_hist, seed=derive_seed(pc.seed, "inference"))[0]
        rows.append(CompareRow("nasmo", pc.seed, r.arch, float(b), r.latency, r.accuracy, s.violation_rate,
                               counting.accuracy_evaluations))
    return rows


def summarize(rows: Sequence[CompareRow], ref: tuple[float, float]) -> list[tuple]:
    out = []
    for method in dict.fromkeys(r.method for r in rows):
        mine = [r for r in rows if r.method == method]
        pts = [FrontierPoint(r.arch, r.latency, r.accuracy) for r in mine]
        hv = frontier_hypervolume(pts, *ref)
        aub = accuracy_under_budget([r.accuracy for r in mine], [r.latency for r in mine],
                                    [r.budget for r in mine]).mean()
        out.append((method, hv, float(aub), sum(r.evaluations for r in mine)))
    return out

