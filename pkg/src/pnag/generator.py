"""Budget-conditioned LSTM policy over architecture tokens, trained with REINFORCE.

The budget is mapped to a vector by interpolating learnable anchor embeddings.
That vector is projected to the initial LSTM state and also concatenated to
every step's input; the policy emits one token per step in the fixed layout
of :mod:`pnag.search_space`. Steps past a unit's sampled
depth are masked: the cell still advances (fed a MASK embedding) but the step
contributes no log-probability or entropy.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn_core
from .budget import BudgetDistribution, interpolation_weights
from .errors import NumericalError, ValidationError
from .search_space import DEPTH, KERNEL, MASK, WIDTH, Architecture, SearchSpaceConfig, arch_key, decode

log = logging.getLogger(__name__)

START_ID, MASK_ID = 0, 1


@dataclass
class GeneratorModel:
    cfg: SearchSpaceConfig
    budget: BudgetDistribution
    params: nn_core.Params
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, cfg: SearchSpaceConfig, budget: BudgetDistribution, seed: int = 0, hidden: int = 64,
             embed_dim: int = 64, budget_dim: int = 64) -> "GeneratorModel":
        rng = np.random.default_rng(seed)
        n_vocab = 2 + len(cfg.depth_choices) + len(cfg.width_choices) + len(cfg.kernel_choices)
        v_max = max(len(cfg.depth_choices), len(cfg.width_choices), len(cfg.kernel_choices))
        T = cfg.seq_len
        params = {
            "budget_emb": nn_core.uniform_init(rng, (budget.k, budget_dim)),
            "init.W": nn_core.uniform_init(rng, (budget_dim, 2 * hidden)),
            "init.b": np.zeros(2 * hidden),
            "tok_emb": nn_core.uniform_init(rng, (n_vocab, embed_dim)),
            "head.W": nn_core.uniform_init(rng, (T, hidden, v_max)),
            "head.b": np.zeros((T, v_max)),
        }
        params.update(nn_core.init_lstm(rng, embed_dim + budget_dim, hidden))
        return cls(cfg, budget, params)

    @property
    def hidden(self) -> int:
        return self.params["init.W"].shape[1] // 2

    @property
    def anchors(self) -> np.ndarray:
        return self.budget.anchors

    @property
    def embed_dim(self) -> int:
        return self.params["tok_emb"].shape[1]

    def _input_offsets(self) -> dict[str, int]:
        nd, nw = len(self.cfg.depth_choices), len(self.cfg.width_choices)
        return {DEPTH: 2, WIDTH: 2 + nd, KERNEL: 2 + nd + nw}

    def check_budgets(self, budgets: np.ndarray) -> None:
        if np.any(budgets < self.budget.b_min) or np.any(budgets > self.budget.b_max):
            raise ValidationError(
                f"budget outside generator range [{self.budget.b_min}, {self.budget.b_max}]: {budgets}")

    def budget_weights(self, budgets) -> np.ndarray:
        budgets = np.atleast_1d(np.asarray(budgets, dtype=float))
        self.check_budgets(budgets)
        return interpolation_weights(self.anchors, budgets)

    def budget_vector(self, budget: float) -> np.ndarray:
        return (self.budget_weights([budget]) @ self.params["budget_emb"])[0]

    def to_dict(self) -> dict:
        return {
            "kind": "generator",
            "version": 1,
            "space": self.cfg.to_dict(),
            "budget": self.budget.to_dict(),
            "anchors": [float(a) for a in self.anchors],
            "meta": self.meta,
            "params": nn_core.params_to_dict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorModel":
        if d.get("kind") != "generator" or d.get("version") != 1:
            raise ValidationError("not a generator model file")
        return cls(SearchSpaceConfig.from_dict(d["space"]), BudgetDistribution.from_dict(d["budget"]),
                   nn_core.params_from_dict(d["params"]), dict(d.get("meta", {})))

    def save(self, path) -> None:
        Path(path).write_text(nn_core.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GeneratorModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Rollout:
    """A batch of trajectories plus everything the backward pass needs."""

    budgets: np.ndarray
    tokens: np.ndarray  # (B, T), MASK at inactive steps
    logp: np.ndarray  # (B, T), zero at inactive steps
    entropy: np.ndarray  # (B, T), zero at inactive steps
    active: np.ndarray  # (B, T) bool
    cache: dict | None = None
    rewards: np.ndarray | None = None

    @property
    def total_logp(self) -> np.ndarray:
        return self.logp.sum(axis=1)

    @property
    def total_entropy(self) -> np.ndarray:
        return self.entropy.sum(axis=1)


@dataclass
class SampledTrajectory:
    arch: Architecture
    token_logprobs: np.ndarray  # one value per active step
    entropy: float
    reward: float = float("nan")


def rollout(model: GeneratorModel, budgets, rng: np.random.Generator | None = None, *,
            greedy: bool = False, forced: np.ndarray | None = None, keep_cache: bool = False) -> Rollout:
    """Run the policy for a batch of budgets.

    Tokens are sampled from ``rng``, chosen by argmax (``greedy``), or taken
    from ``forced`` (teacher forcing; values in masked slots are ignored).
    """
    p = model.params
    cfg = model.cfg
    budgets = np.atleast_1d(np.asarray(budgets, dtype=float))
    B, T, H = budgets.size, cfg.seq_len, model.hidden
    weights = model.budget_weights(budgets)
    bvec = weights @ p["budget_emb"]
    pre = bvec @ p["init.W"] + p["init.b"]
    h = np.tanh(pre[:, :H])
    c = pre[:, H:].copy()
    offsets = model._input_offsets()
    depth_values = np.asarray(cfg.depth_choices)

    tokens = np.full((B, T), MASK, dtype=np.int64)
    logp = np.zeros((B, T))
    ent = np.zeros((B, T))
    active = np.zeros((B, T), dtype=bool)
    prev = np.full(B, START_ID, dtype=np.int64)
    depth = np.zeros(B, dtype=np.int64)
    steps = []
    for t, st in enumerate(cfg.steps):
        x = np.concatenate([p["tok_emb"][prev], bvec], axis=1)
        h, c, lcache = nn_core.lstm_cell_forward(x, h, c, p)
        on = np.ones(B, dtype=bool) if st.kind == DEPTH else depth > st.slot
        n = st.n_choices
        step = {"lstm": lcache, "prev": prev, "h": h, "on": on, "n": n}
        if on.any():
            logits = h @ p["head.W"][t, :, :n] + p["head.b"][t, :n]
            logp_all = nn_core.log_softmax(logits)
            probs = np.exp(logp_all)
            if forced is not None:
                idx = np.where(on, forced[:, t], 0).astype(np.int64)
                if np.any((idx < 0) | (idx >= n)):
                    raise ValidationError(f"forced token out of range at step {t}")
            elif greedy:
                idx = probs.argmax(axis=1)
            else:
                u = rng.random(B)
                idx = np.minimum((u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1), n - 1)
            rows = np.arange(B)
            lp = logp_all[rows, idx]
            h_t = -(probs * logp_all).sum(axis=1)
            logp[:, t] = np.where(on, lp, 0.0)
            ent[:, t] = np.where(on, h_t, 0.0)
            tokens[:, t] = np.where(on, idx, MASK)
            step.update(probs=probs, logp_all=logp_all, idx=idx, ent=h_t)
            if st.kind == DEPTH:
                depth = depth_values[idx]
            prev = np.where(on, offsets[st.kind] + idx, MASK_ID)
        else:
            prev = np.full(B, MASK_ID, dtype=np.int64)
        active[:, t] = on
        steps.append(step)
    cache = {"weights": weights, "bvec": bvec, "h0": np.tanh(pre[:, :H]), "steps": steps} if keep_cache else None
    return Rollout(budgets, tokens, logp, ent, active, cache)


def rollout_backward(model: GeneratorModel, ro: Rollout, coef_logp: np.ndarray, coef_ent: np.ndarray) -> nn_core.Params:
    """Gradient of ``sum_b coef_logp[b]*sum_t logp[b,t] + coef_ent[b]*sum_t H[b,t]``."""
    if ro.cache is None:
        raise ValidationError("rollout was run without keep_cache=True")
    p = model.params
    H = model.hidden
    grads = {name: np.zeros_like(v) for name, v in p.items()}
    B = ro.budgets.size
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    E = model.embed_dim
    dbvec = np.zeros_like(ro.cache["bvec"])
    coef_logp = np.asarray(coef_logp, dtype=float)
    coef_ent = np.asarray(coef_ent, dtype=float)
    for t in reversed(range(len(ro.cache["steps"]))):
        step = ro.cache["steps"][t]
        on = step["on"]
        if "probs" in step:
            n = step["n"]
            probs, logp_all, idx = step["probs"], step["logp_all"], step["idx"]
            d_logits = -probs * coef_logp[:, None]
            d_logits[np.arange(B), idx] += coef_logp
            d_logits += coef_ent[:, None] * (-probs * (logp_all + step["ent"][:, None]))
            d_logits *= on[:, None]
            grads["head.W"][t, :, :n] += step["h"].T @ d_logits
            grads["head.b"][t, :n] += d_logits.sum(axis=0)
            dh = dh + d_logits @ p["head.W"][t, :, :n].T
        dx, dh, dc, g = nn_core.lstm_cell_backward(dh, dc, step["lstm"], p)
        grads["lstm.W"] += g["lstm.W"]
        grads["lstm.b"] += g["lstm.b"]
        np.add.at(grads["tok_emb"], step["prev"], dx[:, :E])
        dbvec += dx[:, E:]
    d_pre = np.concatenate([dh * (1.0 - ro.cache["h0"] ** 2), dc], axis=1)
    grads["init.W"] = ro.cache["bvec"].T @ d_pre
    grads["init.b"] = d_pre.sum(axis=0)
    grads["budget_emb"] = ro.cache["weights"].T @ (d_pre @ p["init.W"].T + dbvec)
    return grads


def sample(model: GeneratorModel, budget: float, rng_seed: int) -> SampledTrajectory:
    ro = rollout(model, [budget], np.random.default_rng(rng_seed))
    return SampledTrajectory(decode(ro.tokens[0], model.cfg), ro.logp[0][ro.active[0]], float(ro.total_entropy[0]))


def sequence_logprob(model: GeneratorModel, budget: float, tokens: np.ndarray) -> tuple[float, float]:
    """Teacher-forced (log-probability, entropy) of one token sequence."""
    ro = rollout(model, [budget], forced=np.atleast_2d(tokens))
    return float(ro.total_logp[0]), float(ro.total_entropy[0])


# ------------------------------------------------------------------- training

@dataclass
class Baseline:
    """Per-anchor exponential moving average of rewards."""

    k: int
    decay: float = 0.95
    values: np.ndarray | None = None
    seen: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.values is None:
            self.values = np.zeros(self.k)
            self.seen = np.zeros(self.k, dtype=bool)

    def get(self, slots: np.ndarray, rewards: np.ndarray) -> np.ndarray:
        """Baseline per sample; anchors not seen before start at their first mean reward."""
        for s in np.unique(slots):
            if not self.seen[s]:
                self.values[s] = rewards[slots == s].mean()
        return self.values[slots].copy()

    def update(self, slots: np.ndarray, rewards: np.ndarray) -> None:
        for s in np.unique(slots):
            r = rewards[slots == s].mean()
            self.values[s] = self.decay * self.values[s] + (1.0 - self.decay) * r if self.seen[s] else r
            self.seen[s] = True


RewardFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def evaluator_reward(model: GeneratorModel, evaluator) -> RewardFn:
    if evaluator.cfg != model.cfg:
        raise ValidationError("evaluator and generator use different search spaces")
    return lambda tokens, budgets: evaluator.score_tokens(tokens, budgets)


def reinforce_step(model: GeneratorModel, reward_fn: RewardFn, opt: nn_core.Adam, baseline: Baseline,
                   rng: np.random.Generator, n_per_anchor: int = 1, entropy_weight: float = 1e-3,
                   resample: bool = False, interior: bool = False) -> Rollout:
    """One policy-gradient ascent step over all anchors; returns the sampled rollout.

    With ``interior`` each gap between adjacent anchors also gets
    ``n_per_anchor`` uniform budget draws. Their baseline interpolates the
    anchor baselines with the budget's own weights, so it stays independent
    of the sampled architecture.
    """
    K = model.budget.k
    anchors = model.anchors
    if resample:
        budgets = model.budget.sample(rng, K * n_per_anchor)
        slots = np.abs(budgets[:, None] - anchors[None, :]).argmin(axis=1)
    else:
        slots = np.repeat(np.arange(K), n_per_anchor)
        budgets = anchors[slots]
    n_fixed = budgets.size
    if interior and not resample and K > 1:
        gap = np.repeat(np.arange(K - 1), n_per_anchor)
        budgets = np.concatenate([budgets, rng.uniform(anchors[gap], anchors[gap + 1])])
    ro = rollout(model, budgets, rng, keep_cache=True)
    rewards = np.asarray(reward_fn(ro.tokens, budgets), dtype=float)
    if not np.all(np.isfinite(rewards)):
        raise NumericalError("non-finite reward")
    base = baseline.get(slots, rewards[:n_fixed])
    if budgets.size > n_fixed:
        base = np.concatenate([base, interpolation_weights(anchors, budgets[n_fixed:]) @ baseline.values])
    adv = rewards - base
    baseline.update(slots, rewards[:n_fixed])
    n = budgets.size
    # descend on -J, J = mean_b[adv_b * sum_t logp + lambda * sum_t H]
    grads = rollout_backward(model, ro, -adv / n, np.full(n, -entropy_weight / n))
    opt.step(model.params, grads)
    ro.cache = None
    ro.rewards = rewards
    return ro


@dataclass
class GeneratorLog:
    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["iter,anchor_ms,mean_reward,violation_rate"]
        lines += [f"{it},{b!r},{r!r},{v!r}" for it, b, r, v in self.rows]
        return "\n".join(lines) + "\n"

    def curve(self, anchor: float) -> list[float]:
        return [r for _, b, r, _ in self.rows if b == anchor]


def train_generator(reward_fn: RewardFn, model: GeneratorModel, iters: int = 20000, seed: int = 0,
                    lr: float = 3e-4, entropy_weight: float = 1e-3, n_per_anchor: int = 1,
                    cost_fn: Callable[[np.ndarray], np.ndarray] | None = None, log_every: int = 1000,
                    resample: bool = False, baseline_decay: float = 0.95, interior: bool = False):
    """Train ``model`` in place for ``iters`` policy-gradient steps; returns ``(model, log)``.

    ``cost_fn`` maps token batches to latency and only feeds the violation
    column of the log, which covers the anchor budgets only.
    """
    rng = np.random.default_rng(seed)
    opt = nn_core.Adam(lr=lr)
    baseline = Baseline(model.budget.k, baseline_decay)
    history = GeneratorLog()
    K = model.budget.k
    anchors = model.anchors
    r_sum = np.zeros(K)
    v_sum = np.zeros(K)
    cnt = np.zeros(K)
    for it in range(1, iters + 1):
        try:
            ro = reinforce_step(model, reward_fn, opt, baseline, rng, n_per_anchor, entropy_weight, resample,
                                interior)
        except NumericalError as exc:
            raise NumericalError(f"generator training failed at iteration {it}: {exc}") from None
        n_log = ro.budgets.size if resample else K * n_per_anchor
        b_log = ro.budgets[:n_log]
        slots = np.abs(b_log[:, None] - anchors[None, :]).argmin(axis=1)
        np.add.at(r_sum, slots, ro.rewards[:n_log])
        np.add.at(cnt, slots, 1)
        if cost_fn is not None:
            np.add.at(v_sum, slots, (cost_fn(ro.tokens[:n_log]) > b_log).astype(float))
        if it % log_every == 0 or it == iters:
            for k in range(K):
                if cnt[k]:
                    viol = v_sum[k] / cnt[k] if cost_fn is not None else float("nan")
                    history.rows.append((it, float(anchors[k]), float(r_sum[k] / cnt[k]), float(viol)))
            r_sum[:] = v_sum[:] = cnt[:] = 0
    return model, history


# ------------------------------------------------------------------ inference

def generate(model: GeneratorModel, budget: float, mode: str = "sample_best", samples: int = 64,
             latency_fn: Callable[[np.ndarray], np.ndarray] | None = None,
             score_fn: RewardFn | None = None, seed: int = 0) -> Architecture:
    """Emit one architecture for ``budget``.

    ``sample_best`` draws ``samples`` trajectories, keeps those with
    ``latency_fn(tokens) <= budget`` and returns the best by ``score_fn``
    (log-probability when no scorer is given); with nothing feasible it
    returns the cheapest sample.
    """
    model.check_budgets(np.atleast_1d(float(budget)))
    if mode == "greedy":
        return decode(rollout(model, [budget], greedy=True).tokens[0], model.cfg)
    if mode != "sample_best":
        raise ValidationError(f"unknown generation mode {mode!r}")
    if latency_fn is None:
        raise ValidationError("sample_best needs a latency function for the feasibility filter")
    ro = rollout(model, np.full(samples, float(budget)), np.random.default_rng(seed))
    lat = np.asarray(latency_fn(ro.tokens), dtype=float)
    score = np.asarray(score_fn(ro.tokens, ro.budgets), dtype=float) if score_fn is not None else ro.total_logp
    archs = [decode(t, model.cfg) for t in ro.tokens]
    feasible = np.flatnonzero(lat <= budget)
    if feasible.size:
        best = min(feasible, key=lambda i: (-score[i], lat[i], arch_key(archs[i])))
    else:
        best = min(range(samples), key=lambda i: (lat[i], arch_key(archs[i])))
    return archs[best]


def sample_archs(model: GeneratorModel, budget: float, n: int, seed: int = 0) -> np.ndarray:
    """Token matrix of ``n`` policy samples at ``budget``."""
    return rollout(model, np.full(n, float(budget)), np.random.default_rng(seed)).tokens
