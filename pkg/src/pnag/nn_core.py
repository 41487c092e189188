"""Small numpy neural-network substrate with hand-written backward passes.

Parameters live in flat ``dict[str, np.ndarray]`` blocks (double precision).
Every forward function returns a cache consumed by its backward twin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

from .errors import NumericalError, ValidationError

Params = dict[str, np.ndarray]

PARAMS_FORMAT_VERSION = 1


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


# ---------------------------------------------------------------------- dense

def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    if x.shape[-1] != W.shape[0]:
        raise ValidationError(f"dense: input dim {x.shape[-1]} != weight rows {W.shape[0]}")
    return x @ W + b, x


def dense_backward(dy: np.ndarray, x: np.ndarray, W: np.ndarray):
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


# ------------------------------------------------------------------------ mlp

def init_mlp(rng: np.random.Generator, sizes, prefix: str = "mlp", scale: float = 0.1) -> Params:
    params: Params = {}
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}.{i}.W"] = uniform_init(rng, (n_in, n_out), scale)
        params[f"{prefix}.{i}.b"] = np.zeros(n_out)
    return params


def mlp_layers(params: Mapping[str, np.ndarray], prefix: str = "mlp") -> int:
    n = 0
    while f"{prefix}.{n}.W" in params:
        n += 1
    return n


def mlp_forward(x: np.ndarray, params: Mapping[str, np.ndarray], prefix: str = "mlp"):
    """Dense layers with ReLU between them and a linear output layer."""
    n = mlp_layers(params, prefix)
    cache = []
    h = x
    for i in range(n):
        W, b = params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"]
        z, _ = dense_forward(h, W, b)
        cache.append((h, z))
        h = np.maximum(z, 0.0) if i < n - 1 else z
    return h, cache


def mlp_backward(dy: np.ndarray, cache, params: Mapping[str, np.ndarray], prefix: str = "mlp"):
    grads: Params = {}
    n = len(cache)
    g = dy
    for i in reversed(range(n)):
        h, z = cache[i]
        if i < n - 1:
            g = g * (z > 0)
        W = params[f"{prefix}.{i}.W"]
        g_in, grads[f"{prefix}.{i}.W"], grads[f"{prefix}.{i}.b"] = dense_backward(g, h, W)
        g = g_in
    return g, grads


# ----------------------------------------------------------------------- lstm

def init_lstm(rng: np.random.Generator, n_in: int, n_hidden: int, prefix: str = "lstm",
              scale: float = 0.1, forget_bias: float = 1.0) -> Params:
    b = np.zeros(4 * n_hidden)
    b[n_hidden:2 * n_hidden] = forget_bias
    return {f"{prefix}.W": uniform_init(rng, (n_in + n_hidden, 4 * n_hidden), scale), f"{prefix}.b": b}


@dataclass
class LSTMCache:
    xh: np.ndarray
    c: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray


def lstm_cell_forward(x, h, c, params: Mapping[str, np.ndarray], prefix: str = "lstm"):
    """One step of a standard LSTM cell; gate order in the weight matrix is i, f, o, g."""
    W, b = params[f"{prefix}.W"], params[f"{prefix}.b"]
    H = h.shape[-1]
    if W.shape != (x.shape[-1] + H, 4 * H) or c.shape != h.shape:
        raise ValidationError(f"lstm: incompatible shapes x{x.shape} h{h.shape} c{c.shape} W{W.shape}")
    xh = np.concatenate([x, h], axis=-1)
    z = xh @ W + b
    i = expit(z[..., :H])
    f = expit(z[..., H:2 * H])
    o = expit(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    return h_new, c_new, LSTMCache(xh, c, i, f, o, g, tanh_c)


def lstm_cell_backward(dh, dc, cache: LSTMCache, params: Mapping[str, np.ndarray], prefix: str = "lstm"):
    """Returns (dx, dh_prev, dc_prev, grads) given gradients w.r.t. the new h and c."""
    W = params[f"{prefix}.W"]
    H = dh.shape[-1]
    do = dh * cache.tanh_c
    dc_tot = dc + dh * cache.o * (1.0 - cache.tanh_c**2)
    di = dc_tot * cache.g
    dg = dc_tot * cache.i
    df = dc_tot * cache.c
    dz = np.concatenate([
        di * cache.i * (1.0 - cache.i),
        df * cache.f * (1.0 - cache.f),
        do * cache.o * (1.0 - cache.o),
        dg * (1.0 - cache.g**2),
    ], axis=-1)
    dxh = dz @ W.T
    grads = {f"{prefix}.W": cache.xh.T @ dz, f"{prefix}.b": dz.sum(axis=0)}
    n_in = dxh.shape[-1] - H
    return dxh[..., :n_in], dxh[..., n_in:], dc_tot * cache.f, grads


# -------------------------------------------------------------------- softmax

def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_logprob(logits: np.ndarray, index):
    """Log-probability of ``index`` and its gradient w.r.t. the logits.

    Works on a single logit vector or a batch of rows.
    """
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    index = np.asarray(index)
    if logits.ndim == 1:
        grad = -probs
        grad[index] += 1.0
        return logp_all[index], grad
    rows = np.arange(logits.shape[0])
    grad = -probs
    grad[rows, index] += 1.0
    return logp_all[rows, index], grad


def categorical_entropy(logits: np.ndarray):
    """Entropy of softmax(logits) per row and its gradient w.r.t. the logits."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=-1)
    grad = -p * (logp + ent[..., None])
    return ent, grad


# ----------------------------------------------------------------- optimizers

def cosine_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    t = min(max(step, 0), total)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / max(total, 1)))


def check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block {name!r}")


@dataclass
class Adam:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    kind = "adam"

    def step(self, params: Params, grads: Mapping[str, np.ndarray]) -> None:
        """In-place descent step on ``params``."""
        check_finite(grads)
        self.step_count += 1
        t = self.step_count
        corr1 = 1.0 - self.beta1**t
        corr2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


@dataclass
class SGDCosine:
    """SGD with momentum whose learning rate follows a cosine from lr_max to lr_min."""

    lr_max: float = 0.1
    lr_min: float = 1e-3
    total_steps: int = 1
    momentum: float = 0.9
    step_count: int = 0
    velocity: Params = field(default_factory=dict)

    kind = "sgd_cosine"

    @property
    def lr(self) -> float:
        return cosine_lr(self.step_count, self.total_steps, self.lr_max, self.lr_min)

    def step(self, params: Params, grads: Mapping[str, np.ndarray]) -> None:
        check_finite(grads)
        lr = self.lr
        for name, g in grads.items():
            if name not in self.velocity:
                self.velocity[name] = np.zeros_like(g)
            vel = self.velocity[name]
            vel *= self.momentum
            vel += g
            params[name] -= lr * vel
        self.step_count += 1


# -------------------------------------------------------------- serialization

def params_to_dict(params: Mapping[str, np.ndarray]) -> dict:
    return {
        "version": PARAMS_FORMAT_VERSION,
        "blocks": {
            name: {"shape": list(arr.shape), "values": [float(v) for v in arr.ravel()]}
            for name, arr in sorted(params.items())
        },
    }


def params_from_dict(d: dict) -> Params:
    if d.get("version") != PARAMS_FORMAT_VERSION:
        raise ValidationError(f"unsupported parameter format version {d.get('version')!r}")
    out: Params = {}
    for name, blk in d["blocks"].items():
        arr = np.asarray(blk["values"], dtype=np.float64)
        shape = tuple(blk["shape"])
        if arr.size != math.prod(shape):
            raise ValidationError(f"block {name!r}: {arr.size} values for shape {shape}")
        out[name] = arr.reshape(shape)
    return out


def dumps(obj: dict) -> str:
    """Deterministic JSON used for every model file."""
    return json.dumps(obj, sort_keys=False, separators=(",", ":"), allow_nan=False)
