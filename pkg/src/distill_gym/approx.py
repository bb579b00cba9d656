"""Small numpy MLPs with hand-written reverse-mode gradients and Adam.

Networks are rectifier MLPs with a linear output layer. All functions take
and return values; nothing here holds hidden random state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_BELOW_ONE = float(np.nextafter(1.0, 0.0))  # keeps saturated tanh strictly inside (-1, 1)


class StaleCacheError(RuntimeError):
    pass


@dataclass
class NetParams:
    weights: list  # weights[k] has shape (sizes[k], sizes[k + 1])
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {k}: incompatible input size {w.shape[0]}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    @classmethod
    def from_arrays(cls, arrays) -> "NetParams":
        n = len(arrays) // 2
        return cls([np.array(a, dtype=float) for a in arrays[:n]], [np.array(a, dtype=float) for a in arrays[n:]])

    def map(self, fn, *others) -> "NetParams":
        return NetParams(
            [fn(w, *(o.weights[k] for o in others)) for k, w in enumerate(self.weights)],
            [fn(b, *(o.biases[k] for o in others)) for k, b in enumerate(self.biases)],
        )

    def copy(self) -> "NetParams":
        return self.map(np.copy)

    def to_dict(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, data: dict) -> "NetParams":
        return cls([np.array(w, dtype=float) for w in data["weights"]], [np.array(b, dtype=float) for b in data["biases"]])


@dataclass
class Cache:
    params: NetParams
    activations: list  # inputs to each layer
    pre: list  # pre-activations of hidden layers


@dataclass
class OptimizerState:
    m: NetParams
    v: NetParams
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    skipped: int = 0
    last_skipped: bool = field(default=False, repr=False)


def init_network(layer_sizes, seed) -> NetParams:
    """Glorot-uniform weights, zero biases. ``seed`` may be an int or a numpy Generator."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"need >= 2 layer sizes, each >= 1; got {layer_sizes}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetParams(weights, biases)


def forward(params: NetParams, x) -> tuple[np.ndarray, Cache]:
    """Evaluate on a vector or a (batch, features) matrix."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != params.weights[0].shape[0]:
        raise ValueError(f"input has {h.shape[-1]} features, network expects {params.weights[0].shape[0]}")
    activations, pre = [], []
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        activations.append(h)
        z = h @ w + b
        if k < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, Cache(params, activations, pre)


def gradient(params: NetParams, cache: Cache, output_cotangent, need_params: bool = True):
    """Gradients of ``sum(output * cotangent)`` w.r.t. parameters and input.

    Returns ``(param_grads, input_grad)``; for batched inputs the parameter
    gradients are summed over the batch. ``need_params=False`` skips the
    parameter gradients (returned as None) when only the input gradient is used.
    """
    if cache.params is not params:
        raise StaleCacheError("cache was produced by a different parameter set")
    g = np.asarray(output_cotangent, dtype=float)
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for k in range(n - 1, -1, -1):
        if need_params:
            a = cache.activations[k]
            gw[k] = np.outer(a, g) if a.ndim == 1 else a.T @ g
            gb[k] = g.copy() if a.ndim == 1 else g.sum(axis=0)
        g = g @ params.weights[k].T
        if k > 0:
            g = g * (cache.pre[k - 1] > 0)
    return (NetParams(gw, gb) if need_params else None), g


def init_optimizer(params: NetParams, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> OptimizerState:
    zeros = params.map(np.zeros_like)
    return OptimizerState(zeros, zeros.copy(), 0, lr, beta1, beta2, eps)


def adam_step(params: NetParams, grads: NetParams, state: OptimizerState) -> tuple[NetParams, OptimizerState]:
    """Bias-corrected Adam update. Non-finite gradients skip the step (counted in ``state.skipped``)."""
    if not all(np.all(np.isfinite(g)) for g in grads.arrays()):
        state = OptimizerState(state.m, state.v, state.step, state.lr, state.beta1, state.beta2, state.eps, state.skipped + 1, True)
        return params, state
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    m = state.m.map(lambda m_, g: b1 * m_ + (1.0 - b1) * g, grads)
    v = state.v.map(lambda v_, g: b2 * v_ + (1.0 - b2) * g * g, grads)
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    lr, eps = state.lr, state.eps
    new = params.map(lambda p, m_, v_: p - lr * (m_ / c1) / (np.sqrt(v_ / c2) + eps), m, v)
    return new, OptimizerState(m, v, t, lr, b1, b2, eps, state.skipped, False)


def adam_scalar(value: float, grad: float, state: dict) -> float:
    """Adam on a single scalar; ``state`` holds m, v, t, lr and is updated in place."""
    if not math.isfinite(grad):
        return value
    state["t"] += 1
    state["m"] = 0.9 * state["m"] + 0.1 * grad
    state["v"] = 0.999 * state["v"] + 0.001 * grad * grad
    m_hat = state["m"] / (1.0 - 0.9 ** state["t"])
    v_hat = state["v"] / (1.0 - 0.999 ** state["t"])
    return value - state["lr"] * m_hat / (math.sqrt(v_hat) + 1e-8)


def soft_update(target: NetParams, online: NetParams, tau: float) -> NetParams:
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    if target.sizes != online.sizes:
        raise ValueError(f"shape mismatch: {target.sizes} vs {online.sizes}")
    if tau == 1:
        return online.copy()
    return target.map(lambda t, o: (1.0 - tau) * t + tau * o, online)


def sample_squashed_gaussian(mean, log_std, noise) -> tuple[np.ndarray, np.ndarray]:
    """tanh(mean + std * noise) and its log-density (summed over the last axis)."""
    mean = np.asarray(mean, dtype=float)
    log_std = np.clip(np.asarray(log_std, dtype=float), LOG_STD_MIN, LOG_STD_MAX)
    noise = np.asarray(noise, dtype=float)
    u = mean + np.exp(log_std) * noise
    action = np.clip(np.tanh(u), -_BELOW_ONE, _BELOW_ONE)
    gauss = -0.5 * noise**2 - log_std - _HALF_LOG_2PI
    log_prob = (gauss - np.log(1.0 - action**2 + SQUASH_EPS)).sum(axis=-1)
    return action, log_prob
