"""Latent-conditioned soft actor-critic: twin critics, Polyak targets,
entropy-regularized tanh-Gaussian actor.

Both meta-RL agents drive the same machinery; the conditioning vector
(`z`) is whatever the owning agent supplies (a sampled task latent for the
posterior-sampling agent, the belief mean/variance for the
belief-conditioned one).  Critic inputs are (s, a, z); actor inputs (s, z).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, backward, concat, minimum
from .nn import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    LOG_2PI,
    ParamSet,
    SQUASH_EPS,
    adam_step,
    clip_grad_norm,
    init_mlp,
    mlp,
    tanh_gaussian,
)


@dataclass
class SacHyper:
    gamma: float = 0.99
    tau_polyak: float = 0.005
    lr: float = 3e-4
    batch_size: int = 256
    alpha: float = 0.2
    hidden: tuple = (128, 128)
    clip: float = 1.0        # global-norm gradient clip; None disables
    weight_decay: float = 1e-4   # decoupled L2 decay on actor/critic weights
    actor_lr: float = None   # defaults to `lr` when None

    def __post_init__(self):
        # gamma=0 and alpha=0 are degenerate but well-defined; allowed for tests
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if not (0.0 < self.tau_polyak <= 1.0):
            raise ValueError("tau_polyak must lie in (0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


class SacNets:
    """Actor + twin critics + Polyak-averaged target critics."""

    def __init__(self, obs_dim, act_dim, cond_dim, hyper, rng):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.cond_dim = cond_dim
        self.hyper = hyper

        h = list(hyper.hidden)
        self.actor = ParamSet()
        init_mlp(self.actor, "pi", [obs_dim + cond_dim] + h + [2 * act_dim], rng,
                 out_scale=0.01)
        self.critics = ParamSet()
        init_mlp(self.critics, "q1", [obs_dim + act_dim + cond_dim] + h + [1], rng)
        init_mlp(self.critics, "q2", [obs_dim + act_dim + cond_dim] + h + [1], rng)
        self.targets = self.critics.values()

    # ---- forward passes --------------------------------------------------

    def actor_dist(self, s, z):
        """Mean and clamped log-std of the policy at (s, z); graph-building."""
        x = concat([Node._lift(s), Node._lift(z)], axis=-1)
        out = mlp(self.actor, "pi", x)
        mean = out[..., : self.act_dim]
        log_std = out[..., self.act_dim :]
        return mean, log_std

    def sample_action(self, s, z, noise):
        """Reparameterized squashed action and its log-prob (graph-building)."""
        mean, log_std = self.actor_dist(s, z)
        return tanh_gaussian(mean, log_std, noise)

    def q(self, which, s, a, z):
        x = concat([Node._lift(s), Node._lift(a), Node._lift(z)], axis=-1)
        out = mlp(self.critics, which, x)
        return out.reshape(out.shape[:-1])

    # numpy-only paths (no graph) for rollouts and bootstrap targets

    def act_np(self, s, z, rng=None):
        """Action for rollouts; deterministic tanh(mean) when rng is None."""
        x = np.concatenate([np.atleast_1d(s), np.atleast_1d(z)], axis=-1)
        out = _mlp_np(self.actor.values(), "pi", x)
        mean, log_std = out[..., : self.act_dim], out[..., self.act_dim :]
        if rng is None:
            return np.tanh(mean)
        std = np.exp(np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX))
        return np.tanh(mean + std * rng.standard_normal(mean.shape))

    def _target_q_min(self, s, a, z):
        x = np.concatenate([s, a, z], axis=-1)
        q1 = _mlp_np(self.targets, "q1", x)[..., 0]
        q2 = _mlp_np(self.targets, "q2", x)[..., 0]
        return np.minimum(q1, q2)


def _mlp_np(values, prefix, x):
    n = 0
    while f"{prefix}.l{n}.W" in values:
        n += 1
    for i in range(n):
        x = x @ values[f"{prefix}.l{i}.W"] + values[f"{prefix}.l{i}.b"]
        if i < n - 1:
            x = np.maximum(x, 0.0)
    return x


def _sample_action_np(nets, s, z, rng):
    """Fresh actor sample with log-prob, numpy only (for bootstrap targets)."""
    x = np.concatenate([s, z], axis=-1)
    out = _mlp_np(nets.actor.values(), "pi", x)
    mean, log_std = out[..., : nets.act_dim], out[..., nets.act_dim :]
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    u = mean + std * rng.standard_normal(mean.shape)
    a = np.tanh(u)
    logp = (
        -0.5 * ((u - mean) / std) ** 2 - log_std - 0.5 * LOG_2PI
        - np.log(1.0 - a**2 + SQUASH_EPS)
    ).sum(axis=-1)
    return a, logp


def critic_target(nets, r, s2, z2, done, hyper, rng):
    """Bellman backup y = r + gamma (1-done) (min target-Q - alpha log pi),
    with a' freshly sampled from the current actor.  Pure numpy; no grads."""
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    s2 = np.atleast_2d(s2)
    z2 = np.atleast_2d(z2)
    done = np.atleast_1d(np.asarray(done, dtype=np.float64))
    a2, logp2 = _sample_action_np(nets, s2, z2, rng)
    q_min = nets._target_q_min(s2, a2, z2)
    return r + hyper.gamma * (1.0 - done) * (q_min - hyper.alpha * logp2)


def critic_loss(nets, s, a, y, z):
    """MSE of both critics against fixed targets `y`; graph-building so
    gradients can flow into `z` (and through it, an encoder)."""
    y = Node._lift(np.asarray(y, dtype=np.float64)).detach()
    q1 = nets.q("q1", s, a, z)
    q2 = nets.q("q2", s, a, z)
    return (q1 - y).square().mean() + (q2 - y).square().mean()


def update_critics(nets, s, a, r, s2, done, z, z2, hyper, rng):
    """One Adam step on the twin-critic regression. `z`, `z2` are the
    per-row conditioning vectors (arrays; no encoder gradient here)."""
    y = critic_target(nets, r, s2, z2, done, hyper, rng)
    nets.critics.zero_grad()
    loss = critic_loss(nets, s, a, y, np.atleast_2d(z))
    backward(loss)
    grads = nets.critics.grads()
    clip_grad_norm(grads, hyper.clip)
    adam_step(nets.critics, grads, hyper.lr)
    _decay(nets.critics, hyper)
    return float(loss.value)


def actor_loss(nets, s, z, hyper, noise):
    """E[alpha log pi(a|s,z) - min Q(s,a,z)] with reparameterized actions."""
    a, logp = nets.sample_action(s, z, noise)
    q = minimum(nets.q("q1", s, a, z), nets.q("q2", s, a, z))
    return (hyper.alpha * logp - q).mean(), logp


def update_actor(nets, s, z, hyper, rng):
    """One Adam step on the actor; critics held fixed.  Returns
    (loss, mean entropy proxy -E[log pi])."""
    s = np.atleast_2d(s)
    z = np.atleast_2d(z)
    noise = rng.standard_normal((s.shape[0], nets.act_dim))
    nets.actor.zero_grad()
    nets.critics.zero_grad()
    loss, logp = actor_loss(nets, s, z, hyper, noise)
    backward(loss)
    grads = nets.actor.grads()
    clip_grad_norm(grads, hyper.clip)
    adam_step(nets.actor, grads,
              hyper.lr if hyper.actor_lr is None else hyper.actor_lr)
    nets.critics.zero_grad()  # critics accumulate grads through Q; discard
    return float(loss.value), float(-logp.value.mean())


def _decay(pset, hyper):
    """Decoupled weight decay on critic weights only (not biases, and not
    the actor — decaying the actor pulls its output toward the zero
    action); damps Q extrapolation far from the data support."""
    wd = hyper.lr * hyper.weight_decay
    if wd <= 0:
        return
    for name, p in pset.params.items():
        if name.endswith(".W"):
            p.value = p.value * (1.0 - wd)


def soft_update_targets(nets, tau):
    for name, value in nets.critics.values().items():
        nets.targets[name] = tau * value + (1.0 - tau) * nets.targets[name]
