"""Budget-aware Pareto dominance, frontier extraction and hypervolume."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .search_space import Architecture, arch_key

TIE_EPS = 1e-6


@dataclass(frozen=True)
class FrontierPoint:
    arch: Architecture
    latency: float
    accuracy: float


def dominance(c1: float, acc1: float, c2: float, acc2: float, budget: float) -> int:
    """+1 if the first architecture is at least as good under ``budget``, else -1.

    Both feasible: higher (or equal) accuracy wins. Otherwise the lower (or
    equal) cost wins, which also makes a feasible one beat an infeasible one.
    """
    for v in (c1, acc1, c2, acc2, budget):
        if not math.isfinite(v):
            raise ValidationError(f"dominance inputs must be finite, got {v}")
    if c1 <= budget and c2 <= budget:
        return 1 if acc1 >= acc2 else -1
    return 1 if c1 <= c2 else -1


def dominance_cost_only(c1: float, acc1: float, c2: float, acc2: float, budget: float) -> int:
    """Ablated rule with the accuracy branch removed: cost decides every pair."""
    return 1 if c1 <= c2 else -1


def dominance_array(c1, acc1, c2, acc2, budget, *, use_accuracy: bool = True) -> np.ndarray:
    """Vectorized :func:`dominance` with numpy broadcasting; returns int8 labels."""
    c1, acc1, c2, acc2, budget = (np.asarray(v, dtype=float) for v in (c1, acc1, c2, acc2, budget))
    if not all(np.isfinite(v).all() for v in (c1, acc1, c2, acc2, budget)):
        raise ValidationError("dominance inputs must be finite")
    by_cost = np.where(c1 <= c2, 1, -1)
    if not use_accuracy:
        return by_cost.astype(np.int8)
    both = (c1 <= budget) & (c2 <= budget)
    by_acc = np.where(acc1 >= acc2, 1, -1)
    return np.where(both, by_acc, by_cost).astype(np.int8)


def tie_mask(c1, acc1, c2, acc2, budget, *, use_accuracy: bool = True, eps: float = TIE_EPS) -> np.ndarray:
    """Pairs whose label would be decided by an exact tie; excluded from ranking."""
    c1, acc1, c2, acc2, budget = (np.asarray(v, dtype=float) for v in (c1, acc1, c2, acc2, budget))
    cost_tie = np.abs(c1 - c2) < eps
    if not use_accuracy:
        return cost_tie
    both = (c1 <= budget) & (c2 <= budget)
    return np.where(both, np.abs(acc1 - acc2) < eps, cost_tie)


def dominance_key(latency: float, accuracy: float, budget: float) -> tuple[int, float]:
    """Lexicographic fitness key equivalent to :func:`dominance`."""
    feasible = latency <= budget
    return (1, accuracy) if feasible else (0, -latency)


def pareto_front(points: Sequence[FrontierPoint]) -> list[FrontierPoint]:
    """Non-dominated subset (latency down, accuracy up), sorted by latency.

    Exact duplicates in both objectives are all kept, since neither
    strictly dominates the other.
    """
    if not points:
        raise ValidationError("pareto_front needs at least one point")
    order = sorted(points, key=lambda p: (p.latency, -p.accuracy, arch_key(p.arch)))
    front: list[FrontierPoint] = []
    best_acc = -math.inf
    best_lat = math.nan
    for p in order:
        if p.accuracy > best_acc:
            front.append(p)
            best_acc, best_lat = p.accuracy, p.latency
        elif p.accuracy == best_acc and p.latency == best_lat:
            front.append(p)
    return front


def best_under_budget(points: Sequence[FrontierPoint], budget: float) -> FrontierPoint:
    if not points:
        raise ValidationError("best_under_budget needs at least one point")
    feasible = [p for p in points if p.latency <= budget]
    if feasible:
        return min(feasible, key=lambda p: (-p.accuracy, p.latency, arch_key(p.arch)))
    return min(points, key=lambda p: (p.latency, arch_key(p.arch)))


def hypervolume(frontier: Iterable[FrontierPoint], ref_latency: float, ref_accuracy: float) -> float:
    """Area dominated by ``frontier`` inside the box bounded by the reference point."""
    pts = sorted(((p.latency, p.accuracy) for p in frontier), key=lambda t: (t[0], -t[1]))
    for lat, acc in pts:
        if lat > ref_latency or acc < ref_accuracy:
            raise ValidationError(
                f"point ({lat}, {acc}) lies outside the reference box ({ref_latency}, {ref_accuracy})")
    area = 0.0
    best_acc = ref_accuracy
    # sweep from the cheapest point; each new accuracy level adds a rectangle up to ref_latency
    for lat, acc in pts:
        if acc > best_acc:
            area += (ref_latency - lat) * (acc - best_acc)
            best_acc = acc
    return area


FRONTIER_HEADER = ("latency_ms", "accuracy", "arch_json")


def write_frontier_csv(path, points: Iterable[FrontierPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRONTIER_HEADER)
        for p in points:
            w.writerow([repr(float(p.latency)), repr(float(p.accuracy)), p.arch.to_json()])


def read_frontier_csv(path) -> list[FrontierPoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != FRONTIER_HEADER:
        raise ValidationError(f"{path}: expected header {','.join(FRONTIER_HEADER)}")
    return [FrontierPoint(Architecture.from_dict(json.loads(a)), float(l), float(c)) for l, c, a in rows[1:]]
