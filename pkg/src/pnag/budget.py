"""Budget anchors and linear interpolation between anchor embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class BudgetDistribution:
    """Budget range [b_min, b_max] with K evenly spaced training anchors.

    With K=1 the single anchor sits at the middle of the range.
    """

    b_min: float
    b_max: float
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError("need at least one budget anchor")
        if not (np.isfinite(self.b_min) and np.isfinite(self.b_max)) or self.b_min <= 0:
            raise ValidationError(f"budget range must be finite and positive, got [{self.b_min}, {self.b_max}]")
        if self.k > 1 and not self.b_min < self.b_max:
            raise ValidationError(f"budget range [{self.b_min}, {self.b_max}] is empty")
        if self.b_min > self.b_max:
            raise ValidationError(f"budget range [{self.b_min}, {self.b_max}] is empty")

    @property
    def anchors(self) -> np.ndarray:
        if self.k == 1:
            return np.array([0.5 * (self.b_min + self.b_max)])
        return np.linspace(self.b_min, self.b_max, self.k)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.b_min, self.b_max, size=n)

    @classmethod
    def parse(cls, spec: str) -> "BudgetDistribution":
        """Parse the ``B_min:B_max:K`` grammar."""
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValidationError(f"anchor spec must be B_min:B_max:K, got {spec!r}")
        try:
            return cls(float(parts[0]), float(parts[1]), int(parts[2]))
        except ValueError as exc:
            raise ValidationError(f"bad anchor spec {spec!r}: {exc}") from None

    def to_dict(self) -> dict:
        return {"b_min": float(self.b_min), "b_max": float(self.b_max), "k": int(self.k)}

    @classmethod
    def from_dict(cls, d: dict) -> "BudgetDistribution":
        return cls(float(d["b_min"]), float(d["b_max"]), int(d["k"]))


def interpolation_weights(anchors: np.ndarray, budgets) -> np.ndarray:
    """Row-stochastic (n, K) matrix W such that ``W @ table`` interpolates embeddings.

    Between adjacent anchors B1 < B < B2 the weight of B1 is (B2 - B) / (B2 - B1);
    budgets must lie inside [anchors[0], anchors[-1]].
    """
    anchors = np.asarray(anchors, dtype=float)
    budgets = np.atleast_1d(np.asarray(budgets, dtype=float))
    K = anchors.size
    W = np.zeros((budgets.size, K))
    if K == 1:
        W[:, 0] = 1.0
        return W
    if np.any(budgets < anchors[0]) or np.any(budgets > anchors[-1]):
        raise ValidationError(f"budget outside anchor range [{anchors[0]}, {anchors[-1]}]: {budgets}")
    hi = np.clip(np.searchsorted(anchors, budgets, side="left"), 1, K - 1)
    lo = hi - 1
    b1, b2 = anchors[lo], anchors[hi]
    xi = (b2 - budgets) / (b2 - b1)
    rows = np.arange(budgets.size)
    W[rows, lo] = xi
    W[rows, hi] += 1.0 - xi
    return W


def supported_range(latencies, lo_q: float = 0.02, hi_q: float = 0.98) -> tuple[float, float]:
    """Budget range covering the central quantiles of observed latencies.

    The extremes of a sampled dataset hold a handful of records, too few for
    a learned scorer to rank reliably, so anchors stay inside the bulk.
    """
    lat = np.asarray(latencies, dtype=float)
    if lat.size == 0:
        raise ValidationError("cannot derive a budget range from no latencies")
    if not 0.0 <= lo_q < hi_q <= 1.0:
        raise ValidationError(f"need 0 <= lo_q < hi_q <= 1, got {lo_q}, {hi_q}")
    lo, hi = np.quantile(lat, [lo_q, hi_q])
    return float(np.round(lo, 1)), float(np.round(hi, 1))
