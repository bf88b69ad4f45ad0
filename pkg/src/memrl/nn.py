"""Layers and optimizer on top of the autodiff core.

Parameters live in a `ParamSet`: an ordered name -> Node mapping with the
Adam moment buffers kept alongside.  Layers are thin functional wrappers
that read their weights out of a ParamSet by prefix, so one optimizer
instance can own an arbitrary collection of networks.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ContractViolation, Node, concat

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6


class ParamSet:
    """Named parameter tensors plus per-parameter Adam state."""

    def __init__(self):
        self.params = {}  # name -> Node (requires_grad=True)
        self.m = {}
        self.v = {}
        self.t = 0

    def add(self, name, value):
        if name in self.params:
            raise ValueError(f"duplicate parameter '{name}'")
        value = np.asarray(value, dtype=np.float64)
        self.params[name] = Node(value, op=f"param:{name}", requires_grad=True)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return self.params[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self):
        """Gradient map after a backward pass; missing grads become zeros."""
        out = {}
        for name, p in self.params.items():
            out[name] = np.zeros_like(p.value) if p.grad is None else p.grad
        return out

    def values(self):
        return {name: p.value.copy() for name, p in self.params.items()}

    def load_values(self, values):
        for name, arr in values.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter '{name}'")
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self.params[name].value.shape:
                raise ContractViolation(
                    f"shape mismatch for '{name}': {arr.shape} vs {self.params[name].value.shape}"
                )
            self.params[name].value = arr

    def state(self):
        """Full optimizer+parameter state, for checkpointing."""
        return {
            "params": self.values(),
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
            "t": self.t,
        }

    def load_state(self, state):
        self.load_values(state["params"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k], dtype=np.float64)
            self.v[k] = np.asarray(state["v"][k], dtype=np.float64)
        self.t = int(state["t"])


def clip_grad_norm(grads, max_norm):
    """Rescale a gradient map in place so its global L2 norm is at most
    `max_norm`.  Returns the pre-clip norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and total > max_norm > 0:
        scale = max_norm / total
        for name in grads:
            grads[name] = grads[name] * scale
    return total


def adam_step(pset, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction, in place on `pset`."""
    if not (lr >= 0 and 0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ContractViolation("bad Adam hyperparameters")
    missing = set(pset.params) - set(grads)
    if missing:
        raise ContractViolation(f"missing gradients for {sorted(missing)}")
    pset.t += 1
    t = pset.t
    for name, p in pset.params.items():
        g = grads[name]
        pset.m[name] = beta1 * pset.m[name] + (1 - beta1) * g
        pset.v[name] = beta2 * pset.v[name] + (1 - beta2) * g * g
        m_hat = pset.m[name] / (1 - beta1**t)
        v_hat = pset.v[name] / (1 - beta2**t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# initializers


def init_linear(pset, prefix, n_in, n_out, rng, scale=None):
    """Uniform +-1/sqrt(fan_in) weights (optionally rescaled) and zero bias."""
    bound = 1.0 / np.sqrt(n_in)
    if scale is not None:
        bound *= scale
    pset.add(f"{prefix}.W", rng.uniform(-bound, bound, size=(n_in, n_out)))
    pset.add(f"{prefix}.b", np.zeros(n_out))


def linear(pset, prefix, x):
    return x @ pset[f"{prefix}.W"] + pset[f"{prefix}.b"]


def init_mlp(pset, prefix, sizes, rng, out_scale=None):
    """Chain of linear layers sized per `sizes`; last layer optionally rescaled."""
    for i in range(len(sizes) - 1):
        last = i == len(sizes) - 2
        init_linear(pset, f"{prefix}.l{i}", sizes[i], sizes[i + 1], rng,
                    scale=out_scale if last else None)


def mlp(pset, prefix, x, activation="relu"):
    """Forward through an init_mlp stack; activation on all but the last layer."""
    n_layers = 0
    while f"{prefix}.l{n_layers}.W" in pset:
        n_layers += 1
    for i in range(n_layers):
        x = linear(pset, f"{prefix}.l{i}", x)
        if i < n_layers - 1:
            x = x.relu() if activation == "relu" else x.tanh()
    return x


def init_gru(pset, prefix, n_in, n_hidden, rng):
    bound = 1.0 / np.sqrt(n_hidden)
    for gate in ("r", "z", "n"):
        pset.add(f"{prefix}.W{gate}", rng.uniform(-bound, bound, size=(n_in, n_hidden)))
        pset.add(f"{prefix}.U{gate}", rng.uniform(-bound, bound, size=(n_hidden, n_hidden)))
        pset.add(f"{prefix}.b{gate}", np.zeros(n_hidden))


def gru_step(pset, prefix, x, h):
    """Single GRU step.  `x`, `h` may be vectors or (batch, dim) matrices.

    r = sigma(Wr x + Ur h + br)
    z = sigma(Wz x + Uz h + bz)
    n = tanh(Wn x + r * (Un h) + bn)
    h' = (1 - z) * n + z * h
    """
    x = Node._lift(x)
    h = Node._lift(h)
    if x.shape[-1] != pset[f"{prefix}.Wr"].shape[0] or h.shape[-1] != pset[f"{prefix}.Ur"].shape[0]:
        raise ContractViolation("gru_step dimension mismatch")
    r = (x @ pset[f"{prefix}.Wr"] + h @ pset[f"{prefix}.Ur"] + pset[f"{prefix}.br"]).sigmoid()
    z = (x @ pset[f"{prefix}.Wz"] + h @ pset[f"{prefix}.Uz"] + pset[f"{prefix}.bz"]).sigmoid()
    n = (x @ pset[f"{prefix}.Wn"] + r * (h @ pset[f"{prefix}.Un"]) + pset[f"{prefix}.bn"]).tanh()
    return (1.0 - z) * n + z * h


LOG_2PI = float(np.log(2.0 * np.pi))


def tanh_gaussian(mean, log_std, noise):
    """Squashed-Gaussian head: returns (action in (-1,1)^d, log_prob).

    u = mean + exp(log_std) * noise, action = tanh(u);
    log_prob sums the Gaussian log-density of u minus the tanh volume
    correction log(1 - tanh(u)^2 + eps) over the action dimension.  For
    batched inputs (batch, d) the log_prob is (batch,).
    """
    mean = Node._lift(mean)
    log_std = Node._lift(log_std).clamp(LOG_STD_MIN, LOG_STD_MAX)
    noise = Node._lift(noise)
    std = log_std.exp()
    u = mean + std * noise
    action = u.tanh()
    log_normal = -0.5 * ((u - mean) / std).square() - log_std - 0.5 * LOG_2PI
    correction = (1.0 - action.square() + SQUASH_EPS).log()
    return action, (log_normal - correction).sum(axis=-1)


def flatten_params(pset):
    """(flat vector, unflatten) pair used by finite-difference tests."""
    names = pset.names()
    flat = np.concatenate([pset[n].value.ravel() for n in names])

    def unflatten(vec):
        out, i = {}, 0
        for n in names:
            size = pset[n].value.size
            out[n] = vec[i : i + size].reshape(pset[n].value.shape)
            i += size
        return out

    return flat, unflatten
