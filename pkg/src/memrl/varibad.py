"""Belief-conditioned meta-RL agent.

A GRU consumes trajectory tuples (s, a, r, s') in order; linear heads map
its hidden state to the mean and log-variance of a diagonal Gaussian
belief over a task latent.  Reward and next-state decoders reconstruct
whole trajectories from a latent sampled at any anchor step, giving a
trajectory VAE trained on its own replay data.  The policy and critics
are a SAC conditioned on the belief (mu, var) recorded when the data was
collected; RL gradients never reach the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import envs as envs_mod
from . import sac as sac_mod
from .autodiff import Node, backward, concat
from .nn import (
    LOG_2PI,
    ParamSet,
    adam_step,
    clip_grad_norm,
    gru_step,
    init_gru,
    init_linear,
    init_mlp,
    linear,
    mlp,
)
from .replay import EmptyBufferError, Trajectory


@dataclass
class VaribadHyper:
    latent_dim: int = 5
    beta_kl: float = 0.05
    gru_hidden: int = 64
    dec_hidden: tuple = (64,)
    vae_lr: float = 3e-4
    n_anchors: int = 4           # decode anchors per VAE update
    vae_batch: int = 4           # trajectories per VAE update
    sac: sac_mod.SacHyper = field(default_factory=sac_mod.SacHyper)


@dataclass
class BeliefState:
    mu: np.ndarray
    var: np.ndarray
    h: np.ndarray

    def cond(self):
        """Policy/critic conditioning vector (mu, var)."""
        return np.concatenate([self.mu, self.var])


@dataclass
class ElboComponents:
    """Signed pieces of the trajectory evidence bound.

    reward_term / transition_term are Gaussian log-likelihood sums (unit
    decoder variance); kl_term is KL(q || prior) >= 0; total is the bound
    itself: reward + transition - beta * kl.
    """

    reward_term: float
    transition_term: float
    kl_term: float
    total: float


class VaribadAgent:
    def __init__(self, obs_dim, act_dim, hyper, rng):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hyper = hyper
        k = hyper.latent_dim
        h = hyper.gru_hidden
        tuple_dim = obs_dim + act_dim + 1 + obs_dim
        self.vae = ParamSet()
        init_gru(self.vae, "gru", tuple_dim, h, rng)
        init_linear(self.vae, "head_mu", h, k, rng)
        init_linear(self.vae, "head_lv", h, k, rng)
        init_mlp(self.vae, "dec_r",
                 [obs_dim + act_dim + k] + list(hyper.dec_hidden) + [1], rng,
                 out_scale=0.01)
        init_mlp(self.vae, "dec_s",
                 [obs_dim + act_dim + k] + list(hyper.dec_hidden) + [obs_dim], rng,
                 out_scale=0.01)
        # policy input = state (+) belief mean (+) belief variance
        self.sac = sac_mod.SacNets(obs_dim, act_dim, 2 * k, hyper.sac, rng)

    # ---- encoding --------------------------------------------------------

    def prior_belief(self):
        k = self.hyper.latent_dim
        return BeliefState(mu=np.zeros(k), var=np.ones(k),
                           h=np.zeros(self.hyper.gru_hidden))

    def encode_history_graph(self, tuples):
        """Graph-building encoder pass over an ordered (T, tuple_dim) array
        (T may be 0).  Returns lists (mu_u, var_u) for u = 0..T, where the
        u=0 entry is the prior."""
        k = self.hyper.latent_dim
        mus = [Node(np.zeros(k))]
        vars_ = [Node(np.ones(k))]
        h = Node(np.zeros(self.hyper.gru_hidden))
        for t in range(len(tuples)):
            h = gru_step(self.vae, "gru", Node(tuples[t]), h)
            mus.append(linear(self.vae, "head_mu", h))
            vars_.append(linear(self.vae, "head_lv", h).exp())
        return mus, vars_

    def encode_history(self, tuples):
        """Belief sequence for every prefix of `tuples`, numpy only."""
        belief = self.prior_belief()
        out = [belief]
        for t in range(len(tuples)):
            belief = self.encode_step(belief, tuples[t])
            out.append(belief)
        return out

    def encode_step(self, belief, tup):
        """Online belief update: one GRU step plus head readout (numpy)."""
        vals = {n: p.value for n, p in self.vae.params.items()}
        x = np.asarray(tup, dtype=np.float64)
        h = belief.h
        r = _sig(x @ vals["gru.Wr"] + h @ vals["gru.Ur"] + vals["gru.br"])
        z = _sig(x @ vals["gru.Wz"] + h @ vals["gru.Uz"] + vals["gru.bz"])
        n = np.tanh(x @ vals["gru.Wn"] + r * (h @ vals["gru.Un"]) + vals["gru.bn"])
        h2 = (1.0 - z) * n + z * h
        mu = h2 @ vals["head_mu.W"] + vals["head_mu.b"]
        var = np.exp(h2 @ vals["head_lv.W"] + vals["head_lv.b"])
        return BeliefState(mu=mu, var=var, h=h2)

    # ---- decoders --------------------------------------------------------

    def decode_reward_graph(self, s, a, z):
        x = concat([s, a, z], axis=-1)
        out = mlp(self.vae, "dec_r", x)
        return out.reshape(out.shape[:-1])

    def decode_state_graph(self, s, a, z):
        x = concat([s, a, z], axis=-1)
        return mlp(self.vae, "dec_s", x)

    def predict_reward(self, z, s, a):
        """Decoder mean reward for (s, a) under latent z (numpy)."""
        vals = {n: p.value for n, p in self.vae.params.items()}
        x = np.concatenate([np.atleast_1d(s), np.atleast_1d(a), np.atleast_1d(z)], axis=-1)
        return sac_mod._mlp_np(vals, "dec_r", x)[..., 0]

    def predict_transition(self, z, s, a):
        vals = {n: p.value for n, p in self.vae.params.items()}
        x = np.concatenate([np.atleast_1d(s), np.atleast_1d(a), np.atleast_1d(z)], axis=-1)
        return sac_mod._mlp_np(vals, "dec_s", x)

    # ---- ELBO ------------------------------------------------------------

    def elbo_graph(self, traj, t, rng):
        """Evidence-bound Node for one trajectory with belief anchor `t`:
        z ~ q(z | tau_{:t}) reparameterized, all T rewards and transitions
        decoded under z.  Returns (total Node, components dict of Nodes)."""
        T = len(traj)
        if not (0 <= t <= T):
            raise ValueError(f"anchor {t} outside [0, {T}]")
        tuples = traj.tuples()
        mus, vars_ = self.encode_history_graph(tuples[:t])
        return self._elbo_from_belief(traj, mus[t], vars_[t], rng)

    def _elbo_from_belief(self, traj, mu, var, rng):
        k = self.hyper.latent_dim
        T = len(traj)
        eps = rng.standard_normal(k)
        z = mu + var**0.5 * eps
        ones = Node(np.ones((T, 1)))
        z_rows = ones @ z.reshape(1, k)
        s = Node(traj.s)
        a = Node(traj.a)
        pred_r = self.decode_reward_graph(s, a, z_rows)
        pred_s2 = self.decode_state_graph(s, a, z_rows)
        reward_term = (-0.5 * (pred_r - Node(traj.r)).square()
                       - 0.5 * LOG_2PI).sum()
        transition_term = (-0.5 * (pred_s2 - Node(traj.s2)).square()
                           - 0.5 * LOG_2PI).sum()
        kl_term = 0.5 * (var + mu.square() - 1.0 - var.log()).sum()
        total = reward_term + transition_term - self.hyper.beta_kl * kl_term
        return total, {"reward": reward_term, "transition": transition_term,
                       "kl": kl_term}

    def _elbo_batch_graph(self, trajs, rng):
        """Mean per-(trajectory, anchor) evidence bound over a batch of
        equal-length trajectories, encoded in one batched GRU pass.  The
        anchor set is shared across the batch (each anchor still uniform)."""
        hp = self.hyper
        k = hp.latent_dim
        B, T = len(trajs), len(trajs[0])
        tup = np.stack([t.tuples() for t in trajs])          # (B, T, d)
        h = Node(np.zeros((B, hp.gru_hidden)))
        hs = [h]
        for t in range(T):
            h = gru_step(self.vae, "gru", Node(tup[:, t]), h)
            hs.append(h)
        s_flat = np.concatenate([t.s for t in trajs])        # (B*T, ds)
        a_flat = np.concatenate([t.a for t in trajs])
        r_flat = np.concatenate([t.r for t in trajs])
        s2_flat = np.concatenate([t.s2 for t in trajs])
        # selection matrix repeating each trajectory's z over its T rows
        sel = np.zeros((B * T, B))
        for i in range(B):
            sel[i * T:(i + 1) * T, i] = 1.0
        sel = Node(sel)
        totals = []
        for _ in range(hp.n_anchors):
            t_anchor = int(rng.integers(T + 1))
            if t_anchor == 0:
                mu = Node(np.zeros((B, k)))
                var = Node(np.ones((B, k)))
            else:
                mu = linear(self.vae, "head_mu", hs[t_anchor])
                var = linear(self.vae, "head_lv", hs[t_anchor]).exp()
            eps = rng.standard_normal((B, k))
            z = mu + var**0.5 * eps                          # (B, k)
            z_rows = sel @ z                                 # (B*T, k)
            pred_r = self.decode_reward_graph(Node(s_flat), Node(a_flat), z_rows)
            pred_s2 = self.decode_state_graph(Node(s_flat), Node(a_flat), z_rows)
            reward_term = (-0.5 * (pred_r - Node(r_flat)).square()
                           - 0.5 * LOG_2PI).sum()
            transition_term = (-0.5 * (pred_s2 - Node(s2_flat)).square()
                               - 0.5 * LOG_2PI).sum()
            kl_term = 0.5 * (var + mu.square() - 1.0 - var.log()).sum()
            totals.append(reward_term + transition_term
                          - hp.beta_kl * kl_term)
        return (sum(totals[1:], totals[0])
                * (1.0 / (B * hp.n_anchors)))

    def elbo(self, traj, t, rng):
        """ElboComponents for one (trajectory, anchor) pair."""
        total, parts = self.elbo_graph(traj, t, rng)
        return ElboComponents(
            reward_term=float(parts["reward"].value),
            transition_term=float(parts["transition"].value),
            kl_term=float(parts["kl"].value),
            total=float(total.value),
        )

    # ---- training --------------------------------------------------------

    def train_iteration(self, buffer, family, tasks, rng,
                        n_collect_tasks=4, n_collect_eps=2, n_vae=20,
                        n_rl=100, collect=True):
        """Collect belief-conditioned rollouts, then interleave VAE updates
        (whole-trajectory ELBO) and SAC updates on stored beliefs."""
        hp = self.hyper
        env = envs_mod.MetaEnv(family)
        returns = []
        if collect:
            idx = rng.choice(len(tasks), size=min(n_collect_tasks, len(tasks)),
                             replace=False)
            for ti in idx:
                belief = self.prior_belief()  # persists across the pair
                eps = []
                for _ in range(n_collect_eps):
                    traj, ep_ret, belief = rollout_online(
                        self, env, tasks[ti], belief, rng, stochastic=True)
                    eps.append(traj)
                    returns.append(ep_ret)
                buffer.insert_trajectory(ti, _join_meta_episode(eps))
        if buffer.n_transitions == 0:
            raise EmptyBufferError(
                "replay buffer empty after collection; check strategy wiring")

        elbos = []
        avail = buffer.task_ids()
        for _ in range(n_vae):
            trajs = []
            for _ in range(hp.vae_batch):
                tid = avail[int(rng.integers(len(avail)))]
                trajs.append(buffer.sample_trajectory(tid, rng))
            if len({len(t) for t in trajs}) == 1:
                loss = -self._elbo_batch_graph(trajs, rng)
            else:  # ragged lengths: per-trajectory graphs
                totals = []
                for traj in trajs:
                    mus, vars_ = self.encode_history_graph(traj.tuples())
                    for _ in range(hp.n_anchors):
                        t = int(rng.integers(len(traj) + 1))
                        total, _parts = self._elbo_from_belief(
                            traj, mus[t], vars_[t], rng)
                        totals.append(total)
                loss = -(sum(totals[1:], totals[0]) * (1.0 / len(totals)))
            self.vae.zero_grad()
            backward(loss)
            grads = self.vae.grads()
            clip_grad_norm(grads, hp.sac.clip)
            adam_step(self.vae, grads, hp.vae_lr)
            elbos.append(-float(loss.value))

        c_losses, a_losses = [], []
        for _ in range(n_rl):
            batch = buffer.sample_rl_batch(hp.sac.batch_size, rng)
            z = batch.extras["bel"]
            z2 = batch.extras["bel2"]
            # the envs end only by time limit, so the bootstrap is never cut
            # (time-limit bootstrapping; the stored done flags mark episode
            # boundaries, not terminal states)
            c_losses.append(sac_mod.update_critics(
                self.sac, batch.s, batch.a, batch.r, batch.s2,
                np.zeros_like(batch.r), z, z2, hp.sac, rng))
            a_loss, _ = sac_mod.update_actor(self.sac, batch.s, z, hp.sac, rng)
            sac_mod.soft_update_targets(self.sac, hp.sac.tau_polyak)
            a_losses.append(a_loss)

        return {
            "train_return": float(np.mean(returns)) if returns else float("nan"),
            "critic_loss": float(np.mean(c_losses)) if c_losses else float("nan"),
            "actor_loss": float(np.mean(a_losses)) if a_losses else float("nan"),
            "elbo": float(np.mean(elbos)) if elbos else float("nan"),
        }

    # ---- meta-test adaptation -------------------------------------------

    def adapt(self, family, task, n_episodes, rng, stochastic=True):
        """Belief persists across all episodes (one meta-episode); the
        environment state resets each episode.  Returns (per-episode
        returns, final BeliefState, trajectories)."""
        env = envs_mod.MetaEnv(family)
        belief = self.prior_belief()
        returns, trajs = [], []
        for _ in range(n_episodes):
            traj, ep_ret, belief = rollout_online(
                self, env, task, belief, rng, stochastic=stochastic)
            returns.append(ep_ret)
            trajs.append(traj)
        return returns, belief, trajs


def rollout_online(agent, env, task, belief, rng, stochastic=True):
    """One episode with the belief updated after every transition.

    Stores the conditioning vectors actually used (belief at s and at s')
    in the trajectory extras, so RL batches replay the collection-time
    beliefs.  Returns (Trajectory, return, final belief).
    """
    obs = env.reset(task, rng)
    S, A, R, S2, D, BEL, BEL2 = [], [], [], [], [], [], []
    done = False
    while not done:
        cond = belief.cond()
        a = agent.sac.act_np(obs, cond, rng if stochastic else None)
        obs2, r, done = env.step(a)
        tup = np.concatenate([obs, a, [r], obs2])
        belief = agent.encode_step(belief, tup)
        S.append(obs)
        A.append(a)
        R.append(r)
        S2.append(obs2)
        D.append(done)
        BEL.append(cond)
        BEL2.append(belief.cond())
        obs = obs2
    traj = Trajectory(
        s=np.array(S), a=np.array(A), r=np.array(R), s2=np.array(S2),
        done=np.array(D, dtype=bool),
        extras={"bel": np.array(BEL), "bel2": np.array(BEL2)},
    )
    return traj, float(np.sum(R)), belief


def _join_meta_episode(eps):
    """Concatenate the episodes of one meta-episode into a single BAMDP
    trajectory.  The belief persists across episode boundaries and the state
    resets, so the next-observation of each boundary row is the reset draw
    that actually followed it; the stored next-beliefs already chain.  The
    done flag marks only the end of the whole meta-episode."""
    parts = []
    for k, t in enumerate(eps):
        s2 = t.s2.copy()
        done = np.zeros(len(t), dtype=bool)
        if k + 1 < len(eps):
            s2[-1] = eps[k + 1].s[0]
        else:
            done[-1] = True
        parts.append((t.s, t.a, t.r, s2, done, t.extras))
    return Trajectory(
        s=np.concatenate([p[0] for p in parts]),
        a=np.concatenate([p[1] for p in parts]),
        r=np.concatenate([p[2] for p in parts]),
        s2=np.concatenate([p[3] for p in parts]),
        done=np.concatenate([p[4] for p in parts]),
        extras={k: np.concatenate([p[5][k] for p in parts])
                for k in parts[0][5]},
    )


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))
