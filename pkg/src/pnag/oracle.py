"""Ground-truth cost and accuracy for architectures.

The synthetic oracle stands in for measured latency and supernet accuracy:
latency is additive over a per-device (width, kernel) lookup table, and
accuracy is a saturating function of a per-layer capacity score plus a small
deterministic per-architecture perturbation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import nn_core
from .dominance import FrontierPoint
from .errors import ConfigError, ValidationError
from .search_space import (
    MASK,
    Architecture,
    SearchSpaceConfig,
    active_mask,
    decode,
    encode,
    one_hot,
    sample_tokens,
    validate,
)


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    per_layer_cost: Mapping[tuple[int, int], float]
    unit_overhead: float
    base_cost: float

    def __post_init__(self) -> None:
        table = {(int(w), int(k)): float(v) for (w, k), v in dict(self.per_layer_cost).items()}
        object.__setattr__(self, "per_layer_cost", table)
        if self.unit_overhead <= 0 or self.base_cost <= 0 or any(v <= 0 for v in table.values()):
            raise ConfigError(f"device {self.name!r}: all costs must be strictly positive")
        widths = sorted({w for w, _ in table})
        kernels = sorted({k for _, k in table})
        for w in widths:
            row = [table[(w, k)] for k in kernels if (w, k) in table]
            if any(b <= a for a, b in zip(row, row[1:])):
                raise ConfigError(f"device {self.name!r}: cost must increase with kernel at width {w}")
        for k in kernels:
            col = [table[(w, k)] for w in widths if (w, k) in table]
            if any(b <= a for a, b in zip(col, col[1:])):
                raise ConfigError(f"device {self.name!r}: cost must increase with width at kernel {k}")

    def layer_cost(self, width: int, kernel: int) -> float:
        try:
            return self.per_layer_cost[(width, kernel)]
        except KeyError:
            raise ConfigError(f"device {self.name!r} has no cost for width={width}, kernel={kernel}") from None

    def cost_table(self, cfg: SearchSpaceConfig) -> np.ndarray:
        """(n_widths, n_kernels) array of layer costs for ``cfg``'s choices."""
        return np.array([[self.layer_cost(w, k) for k in cfg.kernel_choices] for w in cfg.width_choices])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_cost": self.base_cost,
            "unit_overhead": self.unit_overhead,
            "per_layer_cost": [{"width": w, "kernel": k, "ms": v} for (w, k), v in sorted(self.per_layer_cost.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        known = {"name", "base_cost", "unit_overhead", "per_layer_cost"}
        if set(d) != known:
            raise ConfigError(f"device profile needs exactly the fields {sorted(known)}, got {sorted(d)}")
        table = {(int(e["width"]), int(e["kernel"])): float(e["ms"]) for e in d["per_layer_cost"]}
        return cls(str(d["name"]), table, float(d["unit_overhead"]), float(d["base_cost"]))


def _separable_profile(name, base, overhead, c0, width_extra, kernel_extra) -> DeviceProfile:
    table = {(w, k): c0 + dw + dk for w, dw in width_extra.items() for k, dk in kernel_extra.items()}
    return DeviceProfile(name, table, overhead, base)


def default_devices() -> dict[str, DeviceProfile]:
    """Three shipped profiles; over the default space mobile spans [70, 210] ms."""
    return {
        "mobile": _separable_profile("mobile", 20.0, 4.0, 3.0, {3: 0.0, 4: 1.0, 6: 2.5}, {3: 0.0, 5: 1.0, 7: 3.0}),
        "cpu": _separable_profile("cpu", 7.0, 1.2, 1.2, {3: 0.0, 4: 0.4, 6: 1.0}, {3: 0.0, 5: 0.3, 7: 0.8}),
        "gpu": _separable_profile("gpu", 30.0, 4.0, 3.5, {3: 0.0, 4: 1.5, 6: 3.5}, {3: 0.0, 5: 0.5, 7: 1.5}),
    }


@dataclass(frozen=True)
class AccuracyModelParams:
    capacity_weights: Mapping[tuple[int, int, int], float]  # (unit, width, kernel) -> score
    saturation_scale: float
    noise_seed: int = 0
    noise_amplitude: float = 0.002
    acc_floor: float = 0.60
    acc_ceil: float = 0.82

    def __post_init__(self) -> None:
        object.__setattr__(self, "capacity_weights",
                           {(int(u), int(w), int(k)): float(v) for (u, w, k), v in dict(self.capacity_weights).items()})
        if self.saturation_scale <= 0:
            raise ConfigError("saturation_scale must be positive")
        if not 0.0 <= self.noise_amplitude <= 0.02:
            raise ConfigError("noise_amplitude must lie in [0, 0.02]")
        if not 0.0 <= self.acc_floor < self.acc_ceil <= 1.0:
            raise ConfigError("need 0 <= acc_floor < acc_ceil <= 1")
        if any(v < 0 for v in self.capacity_weights.values()):
            raise ConfigError("capacity weights must be non-negative")

    def to_dict(self) -> dict:
        return {
            "capacity_weights": [{"unit": u, "width": w, "kernel": k, "score": v}
                                 for (u, w, k), v in sorted(self.capacity_weights.items())],
            "saturation_scale": self.saturation_scale,
            "noise_seed": self.noise_seed,
            "noise_amplitude": self.noise_amplitude,
            "acc_floor": self.acc_floor,
            "acc_ceil": self.acc_ceil,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AccuracyModelParams":
        known = {"capacity_weights", "saturation_scale", "noise_seed", "noise_amplitude", "acc_floor", "acc_ceil"}
        if set(d) - known or "capacity_weights" not in d or "saturation_scale" not in d:
            raise ConfigError(f"bad accuracy model fields: {sorted(d)}")
        weights = {(int(e["unit"]), int(e["width"]), int(e["kernel"])): float(e["score"]) for e in d["capacity_weights"]}
        rest = {k: d[k] for k in known - {"capacity_weights"} if k in d}
        return cls(weights, **rest)


def synthetic_accuracy_params(cfg: SearchSpaceConfig, seed: int = 0, **overrides) -> AccuracyModelParams:
    """Seeded capacity scores: larger widths/kernels and later units score higher,
    with per-entry jitter so that accuracy per millisecond differs across choices."""
    rng = np.random.default_rng(seed)
    ws, ks = cfg.width_choices, cfg.kernel_choices
    weights = {}
    for u in range(cfg.num_units):
        unit_scale = 0.8 + 0.4 * u / max(cfg.num_units - 1, 1)
        for w in ws:
            w_term = math.log(w / ws[0]) / math.log(ws[-1] / ws[0]) if len(ws) > 1 else 0.0
            for k in ks:
                k_term = (k - ks[0]) / (ks[-1] - ks[0]) if len(ks) > 1 else 0.0
                base = 0.55 + 0.30 * w_term + 0.25 * k_term
                weights[(u, w, k)] = unit_scale * base * rng.uniform(0.8, 1.2)
    typical = cfg.num_units * float(np.mean(cfg.depth_choices)) * float(np.mean(list(weights.values())))
    kwargs = dict(saturation_scale=typical, noise_seed=seed)
    kwargs.update(overrides)
    return AccuracyModelParams(weights, **kwargs)


@dataclass(frozen=True)
class EvaluatedArch:
    arch: Architecture
    latency: Mapping[str, float]
    accuracy: float

    def to_json(self) -> str:
        return json.dumps({"arch": self.arch.to_dict(), "latency": {k: float(v) for k, v in self.latency.items()},
                           "accuracy": float(self.accuracy)}, separators=(",", ":"))


class SyntheticOracle:
    """Deterministic latency per device and accuracy for one search space."""

    def __init__(self, cfg: SearchSpaceConfig, devices: Mapping[str, DeviceProfile] | None = None,
                 acc_params: AccuracyModelParams | None = None):
        self.cfg = cfg
        self.devices = dict(devices) if devices is not None else default_devices()
        self.acc_params = acc_params if acc_params is not None else synthetic_accuracy_params(cfg)
        self._cost_tables = {}
        for name, dev in self.devices.items():
            self._cost_tables[name] = dev.cost_table(cfg)
        cap = np.zeros((cfg.num_units, len(cfg.width_choices), len(cfg.kernel_choices)))
        for u in range(cfg.num_units):
            for i, w in enumerate(cfg.width_choices):
                for j, k in enumerate(cfg.kernel_choices):
                    try:
                        cap[u, i, j] = self.acc_params.capacity_weights[(u, w, k)]
                    except KeyError:
                        raise ConfigError(f"no capacity weight for unit={u}, width={w}, kernel={k}") from None
        self._capacity = cap

    # -- vectorized paths over encoded token batches

    def _layer_tokens(self, tokens: np.ndarray):
        tokens = np.atleast_2d(tokens)
        L = self.cfg.unit_length
        w_idx = np.stack([tokens[:, u * L + 1: (u + 1) * L: 2] for u in range(self.cfg.num_units)], axis=1)
        k_idx = np.stack([tokens[:, u * L + 2: (u + 1) * L: 2] for u in range(self.cfg.num_units)], axis=1)
        on = w_idx != MASK
        return np.where(on, w_idx, 0), np.where(on, k_idx, 0), on

    def latency_tokens(self, tokens: np.ndarray, device: str) -> np.ndarray:
        table = self._cost_tables[device]
        w_idx, k_idx, on = self._layer_tokens(tokens)
        dev = self.devices[device]
        layer = np.where(on, table[w_idx, k_idx], 0.0).sum(axis=(1, 2))
        return dev.base_cost + self.cfg.num_units * dev.unit_overhead + layer

    def capacity_tokens(self, tokens: np.ndarray) -> np.ndarray:
        w_idx, k_idx, on = self._layer_tokens(tokens)
        units = np.arange(self.cfg.num_units)[None, :, None]
        return np.where(on, self._capacity[units, w_idx, k_idx], 0.0).sum(axis=(1, 2))

    def accuracy_tokens(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.atleast_2d(tokens)
        p = self.acc_params
        cap = self.capacity_tokens(tokens)
        acc = p.acc_floor + (p.acc_ceil - p.acc_floor) * (1.0 - np.exp(-cap / p.saturation_scale))
        if p.noise_amplitude > 0:
            acc = acc + p.noise_amplitude * np.array([self._noise(t) for t in tokens])
        return np.clip(acc, p.acc_floor, p.acc_ceil)

    def _noise(self, tokens: np.ndarray) -> float:
        h = hashlib.blake2b(np.asarray(tokens, dtype=np.int64).tobytes(), digest_size=8,
                            key=str(self.acc_params.noise_seed).encode())
        u = int.from_bytes(h.digest(), "little") / 2.0**64
        return 2.0 * u - 1.0

    # -- per-architecture API

    def latency(self, arch: Architecture, device: str) -> float:
        validate(arch, self.cfg)
        return latency(arch, self.devices[device])

    def accuracy(self, arch: Architecture) -> float:
        return float(self.accuracy_tokens(encode(arch, self.cfg)[None, :])[0])

    def evaluate(self, arch: Architecture, devices: Sequence[str] | None = None) -> EvaluatedArch:
        names = list(devices) if devices is not None else list(self.devices)
        return EvaluatedArch(arch, {d: self.latency(arch, d) for d in names}, self.accuracy(arch))

    def frontier_points(self, archs: Iterable[Architecture], device: str) -> list[FrontierPoint]:
        archs = list(archs)
        toks = np.stack([encode(a, self.cfg) for a in archs])
        lat = self.latency_tokens(toks, device)
        acc = self.accuracy_tokens(toks)
        return [FrontierPoint(a, float(l), float(c)) for a, l, c in zip(archs, lat, acc)]


class CountingOracle:
    """Wraps an oracle and counts accuracy queries (latency lookups are free)."""

    def __init__(self, inner):
        self.inner = inner
        self.cfg = inner.cfg
        self.devices = inner.devices
        self.accuracy_evaluations = 0

    def latency_tokens(self, tokens, device):
        return self.inner.latency_tokens(tokens, device)

    def accuracy_tokens(self, tokens):
        tokens = np.atleast_2d(tokens)
        self.accuracy_evaluations += tokens.shape[0]
        return self.inner.accuracy_tokens(tokens)

    def latency(self, arch, device):
        return self.inner.latency(arch, device)

    def accuracy(self, arch):
        self.accuracy_evaluations += 1
        return self.inner.accuracy(arch)


def latency(arch: Architecture, device: DeviceProfile) -> float:
    total = device.base_cost + len(arch.units) * device.unit_overhead
    for _, layer in arch.layers:
        total += device.layer_cost(layer.width, layer.kernel)
    return total


def capacity(arch: Architecture, params: AccuracyModelParams) -> float:
    return sum(params.capacity_weights[(u, layer.width, layer.kernel)] for u, layer in arch.layers)


def accuracy(arch: Architecture, params: AccuracyModelParams, cfg: SearchSpaceConfig) -> float:
    return SyntheticOracle(cfg, {}, params).accuracy(arch)


# ------------------------------------------------------------------- datasets

def collect_dataset(cfg: SearchSpaceConfig, oracle, devices: Sequence[str], m: int, seed: int,
                    mode: str = "set_uniform") -> list[EvaluatedArch]:
    """Sample ``m`` architectures with replacement and attach oracle values."""
    if m < 1:
        raise ValidationError("dataset size must be at least 1")
    rng = np.random.default_rng(seed)
    tokens = sample_tokens(cfg, rng, m, mode)
    lat = {d: oracle.latency_tokens(tokens, d) for d in devices}
    acc = oracle.accuracy_tokens(tokens)
    return [
        EvaluatedArch(decode(tokens[i], cfg), {d: float(lat[d][i]) for d in devices}, float(acc[i]))
        for i in range(m)
    ]


def evaluate_all(cfg: SearchSpaceConfig, oracle, archs: Sequence[Architecture], devices: Sequence[str]):
    tokens = np.stack([encode(a, cfg) for a in archs])
    lat = {d: oracle.latency_tokens(tokens, d) for d in devices}
    acc = oracle.accuracy_tokens(tokens)
    return [EvaluatedArch(a, {d: float(lat[d][i]) for d in devices}, float(acc[i])) for i, a in enumerate(archs)]


def write_jsonl(path, records: Iterable[EvaluatedArch]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def load_tabular(path, cfg: SearchSpaceConfig) -> list[EvaluatedArch]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(d, dict) or set(d) != {"arch", "latency", "accuracy"}:
                raise ValidationError(f"{path}:{lineno}: record needs exactly arch, latency, accuracy")
            try:
                arch = Architecture.from_dict(d["arch"])
                validate(arch, cfg)
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            acc = d["accuracy"]
            if not isinstance(acc, (int, float)) or not 0.0 <= acc <= 1.0:
                raise ValidationError(f"{path}:{lineno}: field 'accuracy' must be in [0, 1], got {acc!r}")
            lat = d["latency"]
            if not isinstance(lat, dict) or not lat:
                raise ValidationError(f"{path}:{lineno}: field 'latency' must be a non-empty object")
            for dev, v in lat.items():
                if not isinstance(v, (int, float)) or not (math.isfinite(v) and v > 0):
                    raise ValidationError(f"{path}:{lineno}: field 'latency.{dev}' must be positive, got {v!r}")
            out.append(EvaluatedArch(arch, {k: float(v) for k, v in lat.items()}, float(acc)))
    return out


class TabularOracle:
    """Oracle backed by a table of measured records; unknown architectures are an error."""

    def __init__(self, cfg: SearchSpaceConfig, records: Sequence[EvaluatedArch]):
        self.cfg = cfg
        self.records = list(records)
        self._index = {tuple(encode(r.arch, cfg)): r for r in self.records}
        self.devices = {d: None for d in (self.records[0].latency if self.records else {})}

    def _lookup(self, tokens: np.ndarray) -> EvaluatedArch:
        try:
            return self._index[tuple(int(t) for t in tokens)]
        except KeyError:
            raise ValidationError("architecture not present in the tabular oracle") from None

    def latency_tokens(self, tokens, device):
        return np.array([self._lookup(t).latency[device] for t in np.atleast_2d(tokens)])

    def accuracy_tokens(self, tokens):
        return np.array([self._lookup(t).accuracy for t in np.atleast_2d(tokens)])

    def latency(self, arch, device):
        return self._lookup(encode(arch, self.cfg)).latency[device]

    def accuracy(self, arch):
        return self._lookup(encode(arch, self.cfg)).accuracy


def dataset_arrays(records: Sequence[EvaluatedArch], cfg: SearchSpaceConfig, device: str):
    """Token matrix, latency vector and accuracy vector for one device."""
    tokens = np.stack([encode(r.arch, cfg) for r in records])
    try:
        lat = np.array([r.latency[device] for r in records])
    except KeyError:
        raise ValidationError(f"dataset has no latency for device {device!r}") from None
    acc = np.array([r.accuracy for r in records])
    return tokens, lat, acc


# ----------------------------------------------------------------- predictors

@dataclass
class Predictor:
    """MLP regressor from masked one-hot features to one or more targets."""

    cfg: SearchSpaceConfig
    params: nn_core.Params
    y_mean: np.ndarray
    y_std: np.ndarray
    targets: tuple[str, ...] = field(default=("y",))

    def predict_tokens(self, tokens: np.ndarray) -> np.ndarray:
        out, _ = nn_core.mlp_forward(one_hot(tokens, self.cfg), self.params)
        return out * self.y_std + self.y_mean

    def predict(self, arch: Architecture) -> np.ndarray:
        return self.predict_tokens(encode(arch, self.cfg)[None, :])[0]

    def latency_fn(self, device: str):
        col = self.targets.index(device)
        return lambda tokens: self.predict_tokens(tokens)[:, col]


def _fit_regressor(cfg, tokens, y, targets, seed, hidden, steps, lr, batch) -> Predictor:
    rng = np.random.default_rng(seed)
    X = one_hot(tokens, cfg)
    y_mean = y.mean(axis=0)
    raw_std = y.std(axis=0)
    y_std = np.where(raw_std > 1e-12, raw_std, 1.0)
    Y = (y - y_mean) / y_std
    params = nn_core.init_mlp(rng, [X.shape[1], *hidden, y.shape[1]])
    opt = nn_core.Adam(lr=lr)
    n = X.shape[0]
    for _ in range(steps):
        idx = rng.choice(n, size=batch, replace=False) if n > batch else slice(None)
        out, cache = nn_core.mlp_forward(X[idx], params)
        diff = out - Y[idx]
        _, grads = nn_core.mlp_backward(2.0 * diff / diff.size, cache, params)
        opt.step(params, grads)
    # a constant target carries no signal; predict it exactly everywhere
    y_std = np.where(raw_std > 1e-12, y_std, 0.0)
    return Predictor(cfg, params, y_mean, y_std, tuple(targets))


def fit_predictors(records: Sequence[EvaluatedArch], cfg: SearchSpaceConfig, seed: int = 0,
                   hidden=(128, 128), steps: int = 3000, lr: float = 1e-3, batch: int = 512):
    """Fit (latency predictor over all devices, accuracy predictor)."""
    if len(records) < 10:
        raise ValidationError(f"need at least 10 records to fit predictors, got {len(records)}")
    tokens = np.stack([encode(r.arch, cfg) for r in records])
    devices = tuple(records[0].latency)
    lat = np.array([[r.latency[d] for d in devices] for r in records])
    acc = np.array([[r.accuracy] for r in records])
    lat_pred = _fit_regressor(cfg, tokens, lat, devices, seed, hidden, steps, lr, batch)
    acc_pred = _fit_regressor(cfg, tokens, acc, ("accuracy",), seed + 1, hidden, steps, lr, batch)
    return lat_pred, acc_pred


def load_oracle_config(path, cfg: SearchSpaceConfig) -> SyntheticOracle:
    """Oracle JSON: {"devices": [profile, ...], "accuracy": params}; either key optional."""
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    unknown = set(d) - {"devices", "accuracy"}
    if unknown:
        raise ConfigError(f"unknown oracle config fields: {sorted(unknown)}")
    devices = {p["name"]: DeviceProfile.from_dict(p) for p in d["devices"]} if "devices" in d else None
    acc = AccuracyModelParams.from_dict(d["accuracy"]) if "accuracy" in d else None
    return SyntheticOracle(cfg, devices, acc)


def oracle_config_dict(oracle: SyntheticOracle) -> dict:
    return {"devices": [d.to_dict() for d in oracle.devices.values()], "accuracy": oracle.acc_params.to_dict()}
