"""Budget-conditioned architecture scorer trained by pairwise hinge ranking.

The scorer is an MLP over ``[masked one-hot tokens, budget embedding]``; the
budget embedding interpolates a small table of learnable anchor vectors.
Training pairs are labelled with :func:`pnag.dominance.dominance_array`.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn_core
from .budget import BudgetDistribution, interpolation_weights
from .dominance import dominance_array, tie_mask
from .errors import NumericalError, ValidationError
from .oracle import EvaluatedArch, dataset_arrays, fit_predictors
from .search_space import Architecture, SearchSpaceConfig, encode, one_hot

log = logging.getLogger(__name__)


@dataclass
class EvaluatorModel:
    cfg: SearchSpaceConfig
    budget: BudgetDistribution
    params: nn_core.Params
    device: str = "mobile"
    label_rule: str = "full"

    @classmethod
    def init(cls, cfg: SearchSpaceConfig, budget: BudgetDistribution, seed: int = 0,
             hidden: Sequence[int] = (256, 256), emb_dim: int = 64, device: str = "mobile",
             label_rule: str = "full") -> "EvaluatorModel":
        rng = np.random.default_rng(seed)
        params = {"budget_emb": nn_core.uniform_init(rng, (budget.k, emb_dim))}
        params.update(nn_core.init_mlp(rng, [cfg.feature_dim + emb_dim, *hidden, 1]))
        return cls(cfg, budget, params, device, label_rule)

    @property
    def anchors(self) -> np.ndarray:
        return self.budget.anchors

    def budget_weights(self, budgets) -> np.ndarray:
        budgets = np.atleast_1d(np.asarray(budgets, dtype=float))
        lo, hi = self.anchors[0], self.anchors[-1]
        if self.budget.k > 1 and (np.any(budgets < lo) or np.any(budgets > hi)):
            warnings.warn(f"budget outside evaluator anchors [{lo}, {hi}]; clamping", stacklevel=3)
            budgets = np.clip(budgets, lo, hi)
        return interpolation_weights(self.anchors, budgets)

    def _forward(self, feats: np.ndarray, weights: np.ndarray):
        emb = weights @ self.params["budget_emb"]
        out, cache = nn_core.mlp_forward(np.concatenate([feats, emb], axis=1), self.params)
        return out[:, 0], cache

    def _backward(self, dscore: np.ndarray, cache, weights: np.ndarray) -> nn_core.Params:
        dx, grads = nn_core.mlp_backward(dscore[:, None], cache, self.params)
        grads["budget_emb"] = weights.T @ dx[:, self.cfg.feature_dim:]
        return grads

    def score_tokens(self, tokens: np.ndarray, budgets) -> np.ndarray:
        tokens = np.atleast_2d(tokens)
        budgets = np.broadcast_to(np.asarray(budgets, dtype=float), (tokens.shape[0],))
        s, _ = self._forward(one_hot(tokens, self.cfg), self.budget_weights(budgets))
        return s

    def score(self, arch: Architecture, budget: float) -> float:
        return float(self.score_tokens(encode(arch, self.cfg)[None, :], budget)[0])

    def to_dict(self) -> dict:
        return {
            "kind": "evaluator",
            "version": 1,
            "space": self.cfg.to_dict(),
            "budget": self.budget.to_dict(),
            "anchors": [float(a) for a in self.anchors],
            "device": self.device,
            "label_rule": self.label_rule,
            "params": nn_core.params_to_dict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluatorModel":
        if d.get("kind") != "evaluator" or d.get("version") != 1:
            raise ValidationError("not an evaluator model file")
        return cls(SearchSpaceConfig.from_dict(d["space"]), BudgetDistribution.from_dict(d["budget"]),
                   nn_core.params_from_dict(d["params"]), d["device"], d["label_rule"])

    def save(self, path) -> None:
        Path(path).write_text(nn_core.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EvaluatorModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class RankingBatch:
    i: np.ndarray
    j: np.ndarray
    k: np.ndarray  # anchor index
    labels: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.i == self.j):
            raise ValidationError("ranking pairs must join distinct records")


def make_pairs(lat: np.ndarray, acc: np.ndarray, anchors: np.ndarray, i, j, k,
               use_accuracy: bool = True) -> RankingBatch:
    """Label candidate pairs with the dominance rule, dropping tie pairs."""
    i, j, k = (np.asarray(v) for v in (i, j, k))
    keep = (i != j) & ~tie_mask(lat[i], acc[i], lat[j], acc[j], anchors[k], use_accuracy=use_accuracy)
    i, j, k = i[keep], j[keep], k[keep]
    labels = dominance_array(lat[i], acc[i], lat[j], acc[j], anchors[k], use_accuracy=use_accuracy)
    return RankingBatch(i, j, k, labels.astype(float))


def hinge(z: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - z)


def ranking_loss(model: EvaluatorModel, tokens: np.ndarray, batch: RankingBatch):
    """Mean hinge loss over the batch and its parameter gradients."""
    if batch.i.size == 0:
        raise ValidationError("empty ranking batch")
    K = model.budget.k
    rows_i = batch.i * K + batch.k
    rows_j = batch.j * K + batch.k
    uniq, inv = np.unique(np.concatenate([rows_i, rows_j]), return_inverse=True)
    rec, anc = np.divmod(uniq, K)
    weights = np.eye(K)[anc]
    s, cache = model._forward(one_hot(tokens[rec], model.cfg), weights)
    n = batch.i.size
    si, sj = s[inv[:n]], s[inv[n:]]
    z = batch.labels * (si - sj)
    loss = float(hinge(z).mean())
    coef = np.where(z < 1.0, -batch.labels, 0.0) / n
    ds = np.zeros_like(s)
    np.add.at(ds, inv[:n], coef)
    np.add.at(ds, inv[n:], -coef)
    return loss, model._backward(ds, cache, weights)


def _grid_labels(lat, acc, anchors, use_accuracy):
    """Dense (n, n, K) labels plus the validity mask (no self pairs, no ties)."""
    c1, c2 = lat[:, None, None], lat[None, :, None]
    a1, a2 = acc[:, None, None], acc[None, :, None]
    b = anchors[None, None, :]
    labels = dominance_array(c1, a1, c2, a2, b, use_accuracy=use_accuracy).astype(float)
    valid = ~tie_mask(c1, a1, c2, a2, b, use_accuracy=use_accuracy)
    valid &= ~np.eye(lat.size, dtype=bool)[:, :, None]
    return labels, valid


def grid_loss(model: EvaluatorModel, feats: np.ndarray, lat, acc, use_accuracy: bool = True):
    """Hinge loss over all ordered non-tie pairs among ``feats`` rows at every anchor."""
    n, K = feats.shape[0], model.budget.k
    labels, valid = _grid_labels(lat, acc, model.anchors, use_accuracy)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0.0, None
    reps = np.repeat(feats, K, axis=0)
    weights = np.tile(np.eye(K), (n, 1))
    s, cache = model._forward(reps, weights)
    S = s.reshape(n, K)
    z = labels * (S[:, None, :] - S[None, :, :])
    loss = float(np.where(valid, hinge(z), 0.0).sum() / n_valid)
    coef = np.where(valid & (z < 1.0), -labels, 0.0) / n_valid
    dS = coef.sum(axis=1) - coef.sum(axis=0)
    return loss, model._backward(dS.reshape(-1), cache, weights)


def pair_agreement(model: EvaluatorModel, tokens, lat, acc, use_accuracy: bool = True) -> float:
    """Fraction of unordered non-tie pairs where the score order matches the label."""
    n, K = tokens.shape[0], model.budget.k
    feats = one_hot(tokens, model.cfg)
    S = np.stack([model._forward(feats, np.tile(np.eye(K)[k], (n, 1)))[0] for k in range(K)], axis=1)
    labels, valid = _grid_labels(lat, acc, model.anchors, use_accuracy)
    valid &= np.triu(np.ones((n, n), dtype=bool), 1)[:, :, None]
    agree = np.sign(S[:, None, :] - S[None, :, :]) == labels
    total = int(valid.sum())
    return float((agree & valid).sum() / total) if total else 1.0


@dataclass
class EvaluatorLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,loss,holdout_agreement"]
        lines += [f"{e},{loss!r},{agr!r}" for e, loss, agr in self.rows]
        return "\n".join(lines) + "\n"


def train_evaluator(records: Sequence[EvaluatedArch], cfg: SearchSpaceConfig, budget: BudgetDistribution,
                    device: str = "mobile", epochs: int = 250, lr_max: float = 0.1, lr_min: float = 1e-3,
                    momentum: float = 0.9, arch_batch: int = 128, holdout_frac: float = 0.2,
                    holdout_max: int = 400, seed: int = 0, hidden: Sequence[int] = (256, 256),
                    emb_dim: int = 64, use_accuracy: bool = True, use_predictors: bool = False):
    """Train an evaluator; returns ``(model, log)``.

    Each epoch visits the shuffled training records in chunks of
    ``arch_batch`` and ranks every ordered non-tie pair inside a chunk at all
    anchors. ``holdout_frac`` of the records are kept out for the log's
    agreement column.
    """
    if len(records) < 2:
        raise ValidationError("need at least 2 records to train the evaluator")
    rng = np.random.default_rng(seed)
    tokens, lat, acc = dataset_arrays(records, cfg, device)
    if use_predictors:
        lat_pred, acc_pred = fit_predictors(records, cfg, seed=seed)
        lat = lat_pred.latency_fn(device)(tokens)
        acc = acc_pred.predict_tokens(tokens)[:, 0]
    n = len(records)
    perm = rng.permutation(n)
    n_hold = int(round(holdout_frac * n)) if n >= 10 else 0
    hold, train = perm[:n_hold], perm[n_hold:]
    if hold.size > holdout_max:
        hold = hold[:holdout_max]
    feats = one_hot(tokens, cfg)

    model = EvaluatorModel.init(cfg, budget, seed=int(rng.integers(2**31)), hidden=hidden, emb_dim=emb_dim,
                                device=device, label_rule="full" if use_accuracy else "cost_only")
    steps_per_epoch = max(1, -(-train.size // arch_batch))
    opt = nn_core.SGDCosine(lr_max, lr_min, total_steps=epochs * steps_per_epoch, momentum=momentum)
    history = EvaluatorLog()
    for epoch in range(1, epochs + 1):
        order = rng.permutation(train)
        losses = []
        for s in range(steps_per_epoch):
            chunk = order[s * arch_batch:(s + 1) * arch_batch]
            if chunk.size < 2:
                continue
            loss, grads = grid_loss(model, feats[chunk], lat[chunk], acc[chunk], use_accuracy)
            if not np.isfinite(loss):
                raise NumericalError(f"evaluator loss diverged at epoch {epoch}, step {s} (lr={opt.lr:.4g})")
            if grads is None:
                continue
            try:
                opt.step(model.params, grads)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, step {s} (lr={opt.lr:.4g}): {exc}") from None
            losses.append(loss)
        epoch_loss = float(np.mean(losses)) if losses else 0.0
        agreement = pair_agreement(model, tokens[hold], lat[hold], acc[hold], use_accuracy) if hold.size > 1 else float("nan")
        history.rows.append((epoch, epoch_loss, agreement))
        log.debug("epoch %d loss %.4f holdout %.4f", epoch, epoch_loss, agreement)
    return model, history
