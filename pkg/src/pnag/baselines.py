"""Per-budget reference searches: regularized evolution and multi-objective policy search.

Both run against an oracle directly (no learned evaluator) and report how many
accuracy evaluations they spent, so comparisons can hold that budget equal.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field

import numpy as np

from .budget import BudgetDistribution
from .dominance import dominance_key
from .errors import ValidationError
from .generator import GeneratorLog, GeneratorModel, train_generator
from .search_space import MASK, SearchSpaceConfig, Architecture, active_mask, arch_key, decode, sample_tokens


@dataclass(frozen=True)
class EvoConfig:
    population: int = 32
    generations: int = 50
    tournament_size: int = 8
    mutation: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ValidationError("evolution needs a population of at least 2")
        if not 0.0 < self.mutation <= 1.0:
            raise ValidationError(f"mutation probability must be in (0, 1], got {self.mutation}")
        if self.tournament_size < 1 or self.generations < 0:
            raise ValidationError("tournament_size must be >= 1 and generations >= 0")

    @property
    def evaluations(self) -> int:
        """Children per generation equal the population size."""
        return self.population * (1 + self.generations)


@dataclass
class SearchResult:
    arch: Architecture
    latency: float
    accuracy: float
    evaluations: int
    history: list = field(default_factory=list)
    model: GeneratorModel | None = None


def canonical(tokens: np.ndarray, cfg: SearchSpaceConfig) -> np.ndarray:
    """Replace values in inactive slots of padded genomes by MASK."""
    tokens = np.atleast_2d(tokens)
    return np.where(active_mask(tokens, cfg), tokens, MASK)


def _random_genomes(cfg: SearchSpaceConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    """Padded genomes: every slot carries a value, so mutations of inactive slots are latent."""
    g = sample_tokens(cfg, rng, n)
    sizes = np.array([st.n_choices for st in cfg.steps])
    fill = (rng.random((n, cfg.seq_len)) * sizes).astype(np.int64)
    return np.where(g == MASK, fill, g)


def mutate(genome: np.ndarray, cfg: SearchSpaceConfig, rng: np.random.Generator, p: float) -> np.ndarray:
    """Resample each token with probability ``p``; at least one active token always changes,
    so a child never repeats its parent."""
    sizes = np.array([st.n_choices for st in cfg.steps])
    child = genome.copy()
    hit = rng.random(cfg.seq_len) < p
    live = np.flatnonzero(active_mask(canonical(genome, cfg), cfg)[0] & (sizes > 1))
    if live.size and not hit[live].any():
        hit[rng.choice(live)] = True
    for t in np.flatnonzero(hit):
        if sizes[t] > 1:
            # draw from the other choices so the token really changes
            v = rng.integers(sizes[t] - 1)
            child[t] = v + (v >= genome[t])
    return child


def evo_search(oracle, budget: float, cfg: EvoConfig = EvoConfig(), device: str = "mobile",
               max_evaluations: int | None = None) -> SearchResult:
    """Regularized evolution with fitness = dominance key under ``budget``.

    ``max_evaluations`` replaces ``cfg.generations`` with an exact cap on
    oracle queries (population included).
    """
    if max_evaluations is not None and max_evaluations < cfg.population:
        raise ValidationError(f"max_evaluations {max_evaluations} is below the population size {cfg.population}")
    space = oracle.cfg
    rng = np.random.default_rng(cfg.seed)

    def fitness(genome):
        tok = canonical(genome, space)
        lat = float(oracle.latency_tokens(tok, device)[0])
        acc = float(oracle.accuracy_tokens(tok)[0])
        return dominance_key(lat, acc, budget), lat, acc

    pop = collections.deque()
    best = None
    history = []
    evals = 0

    def consider(genome):
        nonlocal best, evals
        key, lat, acc = fitness(genome)
        evals += 1
        arch = decode(canonical(genome, space)[0], space)
        if best is None or key > best[0] or (key == best[0] and arch_key(arch) < arch_key(best[1])):
            best = (key, arch, lat, acc)
        history.append((evals, lat, acc))
        return key

    for g in _random_genomes(space, rng, cfg.population):
        pop.append((g, consider(g)))
    children = cfg.generations * cfg.population if max_evaluations is None else max_evaluations - cfg.population
    for _ in range(children):
        idx = rng.choice(len(pop), size=min(cfg.tournament_size, len(pop)), replace=False)
        parent = max((pop[i] for i in idx), key=lambda m: m[1])[0]
        child = mutate(parent, space, rng, cfg.mutation)
        pop.append((child, consider(child)))
        pop.popleft()  # aging: the oldest member dies
    _, arch, lat, acc = best
    return SearchResult(arch, lat, acc, evals, history)


# ----------------------------------------------------------- NAS-MO baseline

@dataclass(frozen=True)
class MoRewardConfig:
    """Multi-objective reward: ``soft_exponent`` is Acc*(c/B)^w, ``absolute`` is Acc + slope*|c/B - 1|."""

    kind: str = "soft_exponent"
    target_b: float = 100.0
    exponent_w: float = -0.07
    penalty_slope: float = -0.1

    def __post_init__(self) -> None:
        if self.kind not in ("soft_exponent", "absolute"):
            raise ValidationError(f"unknown multi-objective reward kind {self.kind!r}")
        if self.kind == "soft_exponent" and self.exponent_w > 0:
            raise ValidationError("the soft latency exponent must not be positive")
        if self.target_b <= 0:
            raise ValidationError("target budget must be positive")


def mo_reward(acc, lat, cfg: MoRewardConfig) -> np.ndarray:
    acc, lat = np.asarray(acc, dtype=float), np.asarray(lat, dtype=float)
    ratio = lat / cfg.target_b
    if cfg.kind == "soft_exponent":
        return acc * ratio ** cfg.exponent_w
    return acc + cfg.penalty_slope * np.abs(ratio - 1.0)


def _single_budget_model(space: SearchSpaceConfig, budget: float, seed: int) -> GeneratorModel:
    return GeneratorModel.init(space, BudgetDistribution(budget, budget, 1), seed=seed)


def nas_mo_search(oracle, budget: float, cfg: MoRewardConfig | None = None, iters: int = 5000,
                  device: str = "mobile", seed: int = 0, n_per_iter: int = 1, lr: float = 3e-4,
                  entropy_weight: float = 1e-3) -> SearchResult:
    """Single-budget policy search rewarded by the oracle's multi-objective score.

    Returns the most accurate feasible sample seen (the cheapest one when no
    sample met the budget) together with the trained policy.
    """
    cfg = cfg if cfg is not None else MoRewardConfig(target_b=budget)
    space = oracle.cfg
    model = _single_budget_model(space, budget, seed)
    seen: dict[bytes, tuple[float, float, Architecture]] = {}

    def reward_fn(tokens, budgets):
        lat = oracle.latency_tokens(tokens, device)
        acc = oracle.accuracy_tokens(tokens)
        for t, l, a in zip(tokens, lat, acc):
            k = t.tobytes()
            if k not in seen:
                seen[k] = (float(l), float(a), decode(t, space))
        return mo_reward(acc, lat, cfg)

    model, log = train_generator(reward_fn, model, iters=iters, seed=seed, lr=lr, entropy_weight=entropy_weight,
                                 n_per_anchor=n_per_iter, cost_fn=lambda t: oracle.latency_tokens(t, device),
                                 log_every=max(1, iters // 20))
    lat, acc, arch = _pick(seen.values(), budget)
    return SearchResult(arch, lat, acc, iters * n_per_iter, log.rows, model)


def _pick(candidates, budget):
    cands = list(candidates)
    feasible = [c for c in cands if c[0] <= budget]
    if feasible:
        return min(feasible, key=lambda c: (-c[1], c[0], arch_key(c[2])))
    return min(cands, key=lambda c: (c[0], arch_key(c[2])))


def independent_search(reward_fn, space: SearchSpaceConfig, budget: float, iters: int, seed: int = 0,
                       **kwargs) -> tuple[GeneratorModel, GeneratorLog]:
    """Fresh single-anchor policy for one budget, trained on ``reward_fn``."""
    model = _single_budget_model(space, budget, seed)
    return train_generator(reward_fn, model, iters=iters, seed=seed, **kwargs)
