"""Discrete architecture space: configs, architectures, token encoding.

A unit is encoded as one depth token followed by ``max_depth`` (width, kernel)
slot pairs; slots beyond the unit's depth hold :data:`MASK`. Tokens are
indices into the config's choice tuples.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import EnumerationLimitError, ValidationError

MASK = -1

DEPTH, WIDTH, KERNEL = "depth", "width", "kernel"


def _check_choices(name: str, values: Sequence[int]) -> tuple[int, ...]:
    values = tuple(int(v) for v in values)
    if not values:
        raise ValidationError(f"{name} must be non-empty")
    if any(v <= 0 for v in values):
        raise ValidationError(f"{name} must be positive integers, got {values}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValidationError(f"{name} must be strictly increasing, got {values}")
    return values


class Step(NamedTuple):
    unit: int
    kind: str
    slot: int  # layer slot for width/kernel steps, -1 for the depth step
    n_choices: int


@dataclass(frozen=True)
class SearchSpaceConfig:
    num_units: int = 5
    depth_choices: tuple[int, ...] = (2, 3, 4)
    width_choices: tuple[int, ...] = (3, 4, 6)
    kernel_choices: tuple[int, ...] = (3, 5, 7)

    def __post_init__(self) -> None:
        if int(self.num_units) <= 0:
            raise ValidationError("num_units must be positive")
        object.__setattr__(self, "num_units", int(self.num_units))
        object.__setattr__(self, "depth_choices", _check_choices("depth_choices", self.depth_choices))
        object.__setattr__(self, "width_choices", _check_choices("width_choices", self.width_choices))
        kernels = _check_choices("kernel_choices", self.kernel_choices)
        if any(k % 2 == 0 for k in kernels):
            raise ValidationError(f"kernel_choices must be odd, got {kernels}")
        object.__setattr__(self, "kernel_choices", kernels)

    @property
    def max_depth(self) -> int:
        return self.depth_choices[-1]

    @property
    def unit_length(self) -> int:
        return 1 + 2 * self.max_depth

    @property
    def seq_len(self) -> int:
        return self.num_units * self.unit_length

    @cached_property
    def steps(self) -> tuple[Step, ...]:
        out = []
        for u in range(self.num_units):
            out.append(Step(u, DEPTH, -1, len(self.depth_choices)))
            for s in range(self.max_depth):
                out.append(Step(u, WIDTH, s, len(self.width_choices)))
                out.append(Step(u, KERNEL, s, len(self.kernel_choices)))
        return tuple(out)

    @cached_property
    def feature_offsets(self) -> np.ndarray:
        """Column offset of each step inside the masked one-hot feature vector."""
        sizes = np.array([st.n_choices for st in self.steps])
        return np.concatenate([[0], np.cumsum(sizes)[:-1]])

    @property
    def feature_dim(self) -> int:
        return int(sum(st.n_choices for st in self.steps))

    def to_dict(self) -> dict:
        return {
            "num_units": self.num_units,
            "depth_choices": list(self.depth_choices),
            "width_choices": list(self.width_choices),
            "kernel_choices": list(self.kernel_choices),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpaceConfig":
        fields = ("num_units", "depth_choices", "width_choices", "kernel_choices")
        unknown = set(d) - set(fields)
        if unknown:
            raise ValidationError(f"unknown search space fields: {sorted(unknown)}")
        missing = [f for f in fields if f not in d]
        if missing:
            raise ValidationError(f"missing search space fields: {missing}")
        return cls(
            num_units=d["num_units"],
            depth_choices=tuple(d["depth_choices"]),
            width_choices=tuple(d["width_choices"]),
            kernel_choices=tuple(d["kernel_choices"]),
        )


DEFAULT_SPACE = SearchSpaceConfig()
# 2 units, depths {1,2}, 2 widths, 2 kernels -> 400 architectures
REDUCED_SPACE = SearchSpaceConfig(2, (1, 2), (3, 6), (3, 5))


class Layer(NamedTuple):
    width: int
    kernel: int


@dataclass(frozen=True)
class UnitSpec:
    depth: int
    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(Layer(*lay) for lay in self.layers))


@dataclass(frozen=True)
class Architecture:
    units: tuple[UnitSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "units", tuple(self.units))

    @property
    def layers(self) -> Iterator[tuple[int, Layer]]:
        """Active (unit index, layer) pairs in order."""
        for u, unit in enumerate(self.units):
            for layer in unit.layers:
                yield u, layer

    def to_dict(self) -> dict:
        return {
            "units": [
                {"depth": u.depth, "layers": [{"width": l.width, "kernel": l.kernel} for l in u.layers]}
                for u in self.units
            ]
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        if not isinstance(d, dict) or set(d) != {"units"}:
            raise ValidationError(f"architecture must have exactly the field 'units', got {d!r}")
        units = []
        for i, u in enumerate(d["units"]):
            if not isinstance(u, dict) or set(u) != {"depth", "layers"}:
                raise ValidationError(f"unit {i}: expected fields depth, layers")
            layers = []
            for j, lay in enumerate(u["layers"]):
                if not isinstance(lay, dict) or set(lay) != {"width", "kernel"}:
                    raise ValidationError(f"unit {i} layer {j}: expected fields width, kernel")
                layers.append(Layer(int(lay["width"]), int(lay["kernel"])))
            units.append(UnitSpec(int(u["depth"]), tuple(layers)))
        return cls(tuple(units))

    @classmethod
    def from_json(cls, s: str) -> "Architecture":
        return cls.from_dict(json.loads(s))


def validate(arch: Architecture, cfg: SearchSpaceConfig) -> None:
    """Raise :class:`ValidationError` naming the first offending unit/layer."""
    if len(arch.units) != cfg.num_units:
        raise ValidationError(f"expected {cfg.num_units} units, got {len(arch.units)}")
    for u, unit in enumerate(arch.units):
        if unit.depth not in cfg.depth_choices:
            raise ValidationError(f"unit {u}: depth {unit.depth} not in {cfg.depth_choices}")
        if len(unit.layers) != unit.depth:
            raise ValidationError(f"unit {u}: depth {unit.depth} but {len(unit.layers)} layers")
        for j, layer in enumerate(unit.layers):
            if layer.width not in cfg.width_choices:
                raise ValidationError(f"unit {u} layer {j}: width {layer.width} not in {cfg.width_choices}")
            if layer.kernel not in cfg.kernel_choices:
                raise ValidationError(f"unit {u} layer {j}: kernel {layer.kernel} not in {cfg.kernel_choices}")


def encode(arch: Architecture, cfg: SearchSpaceConfig) -> np.ndarray:
    validate(arch, cfg)
    out = np.full(cfg.seq_len, MASK, dtype=np.int64)
    for u, unit in enumerate(arch.units):
        base = u * cfg.unit_length
        out[base] = cfg.depth_choices.index(unit.depth)
        for s, layer in enumerate(unit.layers):
            out[base + 1 + 2 * s] = cfg.width_choices.index(layer.width)
            out[base + 2 + 2 * s] = cfg.kernel_choices.index(layer.kernel)
    return out


def decode(tokens: Sequence[int], cfg: SearchSpaceConfig, *, strict: bool = True) -> Architecture:
    """Inverse of :func:`encode`.

    With ``strict=False`` the values in slots beyond each unit's depth are
    ignored, so padded genomes (no MASK) decode too.
    """
    tokens = np.asarray(tokens)
    if tokens.shape != (cfg.seq_len,):
        raise ValidationError(f"token sequence must have length {cfg.seq_len}, got {tokens.shape}")
    units = []
    for u in range(cfg.num_units):
        base = u * cfg.unit_length
        d_idx = int(tokens[base])
        if not 0 <= d_idx < len(cfg.depth_choices):
            raise ValidationError(f"unit {u}: depth token {d_idx} out of range")
        depth = cfg.depth_choices[d_idx]
        layers = []
        for s in range(cfg.max_depth):
            w_idx, k_idx = int(tokens[base + 1 + 2 * s]), int(tokens[base + 2 + 2 * s])
            if s < depth:
                if not 0 <= w_idx < len(cfg.width_choices):
                    raise ValidationError(f"unit {u} layer {s}: width token {w_idx} out of range")
                if not 0 <= k_idx < len(cfg.kernel_choices):
                    raise ValidationError(f"unit {u} layer {s}: kernel token {k_idx} out of range")
                layers.append(Layer(cfg.width_choices[w_idx], cfg.kernel_choices[k_idx]))
            elif strict and (w_idx != MASK or k_idx != MASK):
                raise ValidationError(f"unit {u} layer {s}: inactive slot must hold MASK")
        units.append(UnitSpec(depth, tuple(layers)))
    return Architecture(tuple(units))


def active_mask(tokens: np.ndarray, cfg: SearchSpaceConfig) -> np.ndarray:
    """Boolean (n, seq_len) mask of steps that carry a real token."""
    tokens = np.atleast_2d(tokens)
    depth_values = np.asarray(cfg.depth_choices)
    mask = np.ones(tokens.shape, dtype=bool)
    for u in range(cfg.num_units):
        base = u * cfg.unit_length
        depth = depth_values[tokens[:, base]]
        for s in range(cfg.max_depth):
            on = depth > s
            mask[:, base + 1 + 2 * s] = on
            mask[:, base + 2 + 2 * s] = on
    return mask


def one_hot(tokens: np.ndarray, cfg: SearchSpaceConfig) -> np.ndarray:
    """Masked one-hot features, shape (n, feature_dim); MASK slots are zero rows."""
    tokens = np.atleast_2d(tokens)
    n = tokens.shape[0]
    out = np.zeros((n, cfg.feature_dim))
    active = active_mask(tokens, cfg)
    rows, steps = np.nonzero(active)
    out[rows, cfg.feature_offsets[steps] + tokens[rows, steps]] = 1.0
    return out


def unit_count(cfg: SearchSpaceConfig) -> int:
    per_layer = len(cfg.width_choices) * len(cfg.kernel_choices)
    return sum(per_layer**d for d in cfg.depth_choices)


def count(cfg: SearchSpaceConfig) -> int:
    """Exact size of the space as a Python int."""
    return unit_count(cfg) ** cfg.num_units


def _depth_probs(cfg: SearchSpaceConfig, mode: str) -> np.ndarray:
    if mode == "set_uniform":
        per_layer = len(cfg.width_choices) * len(cfg.kernel_choices)
        sizes = np.array([float(per_layer) ** d for d in cfg.depth_choices])
        return sizes / sizes.sum()
    if mode == "structure_uniform":
        return np.full(len(cfg.depth_choices), 1.0 / len(cfg.depth_choices))
    raise ValidationError(f"unknown sampling mode {mode!r}")


def sample_tokens(cfg: SearchSpaceConfig, rng: np.random.Generator, n: int,
                  mode: str = "set_uniform") -> np.ndarray:
    """Draw ``n`` encoded architectures at once, shape (n, seq_len)."""
    probs = _depth_probs(cfg, mode)
    out = np.full((n, cfg.seq_len), MASK, dtype=np.int64)
    depth_values = np.asarray(cfg.depth_choices)
    for u in range(cfg.num_units):
        base = u * cfg.unit_length
        d_idx = rng.choice(len(probs), size=n, p=probs)
        out[:, base] = d_idx
        widths = rng.integers(len(cfg.width_choices), size=(n, cfg.max_depth))
        kernels = rng.integers(len(cfg.kernel_choices), size=(n, cfg.max_depth))
        on = depth_values[d_idx][:, None] > np.arange(cfg.max_depth)[None, :]
        out[:, base + 1: base + cfg.unit_length: 2] = np.where(on, widths, MASK)
        out[:, base + 2: base + cfg.unit_length: 2] = np.where(on, kernels, MASK)
    return out


def sample_uniform(cfg: SearchSpaceConfig, rng_seed: int, mode: str = "set_uniform") -> Architecture:
    rng = np.random.default_rng(rng_seed)
    return decode(sample_tokens(cfg, rng, 1, mode)[0], cfg)


def _unit_options(cfg: SearchSpaceConfig) -> list[UnitSpec]:
    pairs = [Layer(w, k) for w in cfg.width_choices for k in cfg.kernel_choices]
    return [UnitSpec(d, layers) for d in cfg.depth_choices for layers in itertools.product(pairs, repeat=d)]


def enumerate_space(cfg: SearchSpaceConfig, limit: int = 10**6) -> list[Architecture]:
    """Every architecture exactly once, in lexicographic token order."""
    n = count(cfg)
    if n > limit:
        raise EnumerationLimitError(n, limit)
    options = _unit_options(cfg)
    return [Architecture(units) for units in itertools.product(options, repeat=cfg.num_units)]


def arch_key(arch: Architecture) -> tuple:
    """Canonical, totally ordered key used for deterministic tie-breaking."""
    return tuple((u.depth, tuple(u.layers)) for u in arch.units)
