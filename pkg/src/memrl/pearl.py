"""Posterior-sampling meta-RL agent.

A per-transition MLP maps each context tuple (s, a, r, s') to a diagonal
Gaussian factor; the task posterior is the normalized product of those
factors with a unit Gaussian prior (precision-weighted, permutation
invariant).  A latent z sampled from the posterior conditions a SAC policy
and twin critics; the encoder trains through the critic loss plus a
KL-to-prior penalty.  At test time the agent acts under one z per episode,
re-sampling from the updated posterior between episodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import envs as envs_mod
from . import sac as sac_mod
from .autodiff import Node, backward, concat
from .nn import ParamSet, adam_step, clip_grad_norm, init_mlp, mlp
from .replay import EmptyBufferError, Trajectory


@dataclass
class PearlHyper:
    latent_dim: int = 5
    beta_kl: float = 0.1
    context_len: int = 100
    enc_hidden: tuple = (64, 64)
    enc_lr: float = 3e-4
    meta_batch: int = 4          # tasks per gradient step
    sac: sac_mod.SacHyper = field(default_factory=sac_mod.SacHyper)


@dataclass
class TaskPosterior:
    """Diagonal Gaussian over the task latent."""

    mu: np.ndarray
    var: np.ndarray


def kl_to_prior(mu, var):
    """KL(N(mu, diag var) || N(0, I)) = 1/2 sum(var + mu^2 - 1 - log var)."""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    return float(0.5 * np.sum(var + mu**2 - 1.0 - np.log(var)))


class PearlAgent:
    def __init__(self, obs_dim, act_dim, hyper, rng):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hyper = hyper
        k = hyper.latent_dim
        tuple_dim = obs_dim + act_dim + 1 + obs_dim
        self.encoder = ParamSet()
        init_mlp(self.encoder, "enc",
                 [tuple_dim] + list(hyper.enc_hidden) + [2 * k], rng)
        self.sac = sac_mod.SacNets(obs_dim, act_dim, k, hyper.sac, rng)

    # ---- inference -------------------------------------------------------

    def encode_context_graph(self, context):
        """Posterior (mu, var) as graph Nodes.  `context` is an (N, tuple_dim)
        array; N may be 0, in which case the prior N(0, I) is returned."""
        k = self.hyper.latent_dim
        if len(context) == 0:
            return Node(np.zeros(k)), Node(np.ones(k))
        out = mlp(self.encoder, "enc", Node(np.atleast_2d(context)))
        mu_i = out[:, :k]
        var_i = out[:, k:].softplus() + 1e-8
        prec = 1.0 + (1.0 / var_i).sum(axis=0)
        mu = (mu_i / var_i).sum(axis=0) / prec
        return mu, 1.0 / prec

    def encode_context(self, context):
        """Numpy-facing posterior: the product of per-tuple Gaussian factors
        with the unit prior."""
        mu, var = self.encode_context_graph(context)
        return TaskPosterior(mu=np.array(mu.value), var=np.array(var.value))

    def sample_latent(self, posterior, rng):
        eps = rng.standard_normal(self.hyper.latent_dim)
        return posterior.mu + np.sqrt(posterior.var) * eps

    # ---- training --------------------------------------------------------

    def train_iteration(self, rl_buffer, enc_buffer, family, tasks, rng,
                        n_collect_tasks=4, n_collect_eps=2, n_grad=100,
                        collect=True):
        """One training iteration: rollout collection followed by `n_grad`
        joint encoder+SAC updates.  Returns a metrics dict."""
        hp = self.hyper
        env = envs_mod.MetaEnv(family)
        returns = []
        if collect:
            idx = rng.choice(len(tasks), size=min(n_collect_tasks, len(tasks)),
                             replace=False)
            for ti in idx:
                context = _task_context(enc_buffer, ti, hp.context_len)
                for _ in range(n_collect_eps):
                    post = self.encode_context(context)
                    z = self.sample_latent(post, rng)
                    traj, ep_ret = rollout(self, env, tasks[ti], z, rng,
                                           stochastic=True)
                    rl_buffer.insert_trajectory(ti, traj)
                    if enc_buffer is not rl_buffer:
                        enc_buffer.insert_trajectory(ti, traj)
                    context = np.concatenate([context, traj.tuples()], axis=0) \
                        if len(context) else traj.tuples()
                    context = context[-hp.context_len:]
                    returns.append(ep_ret)

        if rl_buffer.n_transitions == 0:
            raise EmptyBufferError(
                "replay buffer empty after collection; check strategy wiring")

        c_losses, a_losses, kls = [], [], []
        per_task = max(1, hp.sac.batch_size // hp.meta_batch)
        avail = rl_buffer.task_ids()
        for _ in range(n_grad):
            picked = [avail[i] for i in rng.integers(len(avail), size=hp.meta_batch)]
            rows_s, rows_a, rows_y, z_nodes, z_vals, kl_nodes = [], [], [], [], [], []
            for tid in picked:
                ctx = enc_buffer.sample_context(tid, hp.context_len, "recent", rng)
                mu, var = self.encode_context_graph(ctx)
                eps = rng.standard_normal(hp.latent_dim)
                z = mu + var ** 0.5 * eps
                batch = _task_rl_batch(rl_buffer, tid, per_task, rng)
                n = len(batch)
                ones = Node(np.ones((n, 1)))
                z_rows = ones @ z.reshape(1, hp.latent_dim)
                z_val = np.broadcast_to(z.value, (n, hp.latent_dim))
                # time-limit bootstrapping: episodes end only by timeout, so
                # the bootstrap is never cut
                y = sac_mod.critic_target(self.sac, batch.r, batch.s2, z_val,
                                          np.zeros_like(batch.r), hp.sac, rng)
                rows_s.append(batch.s)
                rows_a.append(batch.a)
                rows_y.append(y)
                z_nodes.append(z_rows)
                z_vals.append(z_val)
                kl_nodes.append(0.5 * (var + mu.square() - 1.0 - var.log()).sum())

            s = np.concatenate(rows_s)
            a = np.concatenate(rows_a)
            y = np.concatenate(rows_y)
            z_all = concat(z_nodes, axis=0)
            kl_mean = sum(kl_nodes[1:], kl_nodes[0]) * (1.0 / len(kl_nodes))

            self.sac.critics.zero_grad()
            self.encoder.zero_grad()
            c_loss = sac_mod.critic_loss(self.sac, s, a, y, z_all)
            total = c_loss + hp.beta_kl * kl_mean
            backward(total)
            c_grads = self.sac.critics.grads()
            clip_grad_norm(c_grads, hp.sac.clip)
            adam_step(self.sac.critics, c_grads, hp.sac.lr)
            e_grads = self.encoder.grads()
            clip_grad_norm(e_grads, hp.sac.clip)
            adam_step(self.encoder, e_grads, hp.enc_lr)

            a_loss, _ = sac_mod.update_actor(self.sac, s, np.concatenate(z_vals),
                                             hp.sac, rng)
            sac_mod.soft_update_targets(self.sac, hp.sac.tau_polyak)
            c_losses.append(float(c_loss.value))
            a_losses.append(a_loss)
            kls.append(float(kl_mean.value))

        return {
            "train_return": float(np.mean(returns)) if returns else float("nan"),
            "critic_loss": float(np.mean(c_losses)) if c_losses else float("nan"),
            "actor_loss": float(np.mean(a_losses)) if a_losses else float("nan"),
            "kl": float(np.mean(kls)) if kls else float("nan"),
        }

    # ---- meta-test adaptation -------------------------------------------

    def adapt(self, family, task, n_episodes, rng, stochastic=True):
        """Posterior-sampling adaptation: episode 1 under z ~ N(0, I), then
        re-encode the accumulated context and resample z between episodes.

        Returns (per-episode returns, per-episode posteriors, trajectories).
        """
        env = envs_mod.MetaEnv(family)
        k = self.hyper.latent_dim
        context = np.zeros((0, self.obs_dim * 2 + self.act_dim + 1))
        posterior = TaskPosterior(mu=np.zeros(k), var=np.ones(k))
        returns, posteriors, trajs = [], [], []
        for _ in range(n_episodes):
            z = self.sample_latent(posterior, rng)
            traj, ep_ret = rollout(self, env, task, z, rng, stochastic=stochastic)
            context = np.concatenate([context, traj.tuples()], axis=0)
            posterior = self.encode_context(context)
            returns.append(ep_ret)
            posteriors.append(posterior)
            trajs.append(traj)
        return returns, posteriors, trajs


def rollout(agent, env, task, z, rng, stochastic=True):
    """One episode under a fixed latent `z`; returns (Trajectory, return)."""
    obs = env.reset(task, rng)
    S, A, R, S2, D = [], [], [], [], []
    done = False
    while not done:
        a = agent.sac.act_np(obs, z, rng if stochastic else None)
        obs2, r, done = env.step(a)
        S.append(obs)
        A.append(a)
        R.append(r)
        S2.append(obs2)
        D.append(done)
        obs = obs2
    traj = Trajectory(s=np.array(S), a=np.array(A), r=np.array(R),
                      s2=np.array(S2), done=np.array(D, dtype=bool))
    return traj, float(np.sum(R))


def _task_context(buffer, task_id, context_len):
    try:
        return buffer.sample_context(task_id, context_len, "recent", None)
    except EmptyBufferError:
        return np.zeros((0, 0))  # no data yet: empty context -> prior


def _task_rl_batch(buffer, task_id, n, rng):
    rows = [buffer._random_transition(rng, task_id) for _ in range(n)]
    return buffer._pack(rows)
