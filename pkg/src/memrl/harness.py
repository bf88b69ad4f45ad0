"""Experiment pipeline: meta-training, meta-testing (embedding and
trajectory dumps), strategy comparison, and the belief-oracle benchmark.

Every run writes into one directory named {env}-{algo}-{strategy}-{seed}
containing the resolved config (INI), a metrics CSV, checkpoints (JSON
parameter maps), and at test time embeddings / returns / trajectory files.
All randomness flows from a single seeded Generator, so identical
config+seed reproduces every output byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import analysis, envs as envs_mod, oracle as oracle_mod, replay as replay_mod
from . import sac as sac_mod
from .pearl import PearlAgent, PearlHyper
from .varibad import VaribadAgent, VaribadHyper


class ConfigError(ValueError):
    """Invalid or unknown configuration input."""


@dataclass
class ExperimentConfig:
    # [run]
    env: str = "point"
    algo: str = "pearl"
    strategy: str = "short"
    seed: int = 0
    iterations: int = 500
    out: str = "runs"
    n_train_tasks: int = 100
    n_test_tasks: int = 20
    task_seed: int = 1234
    collect_tasks: int = 4
    collect_episodes: int = 2
    grad_steps: int = 200
    eval_interval: int = 10
    eval_tasks: int = 8
    eval_episodes: int = 2
    checkpoint_interval: int = 50
    capacity: int = 1000000
    clear_encoder_only: bool = False
    # [sac]
    gamma: float = 0.99
    tau_polyak: float = 0.005
    lr: float = 3e-4
    batch_size: int = 256
    alpha: float = 0.2
    hidden: str = "128,128"
    # [pearl]
    latent_dim: int = 5
    beta_kl: float = 0.1
    context_len: int = 100
    enc_lr: float = 3e-4
    meta_batch: int = 4
    # [varibad]
    vae_beta_kl: float = 0.05
    gru_hidden: int = 64
    dec_hidden: str = "64"
    vae_lr: float = 3e-4
    vae_steps: int = 20
    n_anchors: int = 4
    vae_batch: int = 4
    # [test]
    test_goals: int = 20
    test_runs: int = 40
    test_episodes: int = 5
    dump_runs: int = 2

    SECTIONS = {
        "run": ["env", "algo", "strategy", "seed", "iterations", "out",
                "n_train_tasks", "n_test_tasks", "task_seed", "collect_tasks",
                "collect_episodes", "grad_steps", "eval_interval", "eval_tasks",
                "eval_episodes", "checkpoint_interval", "capacity",
                "clear_encoder_only"],
        "sac": ["gamma", "tau_polyak", "lr", "batch_size", "alpha", "hidden"],
        "pearl": ["latent_dim", "beta_kl", "context_len", "enc_lr", "meta_batch"],
        "varibad": ["vae_beta_kl", "gru_hidden", "dec_hidden", "vae_lr",
                    "vae_steps", "n_anchors", "vae_batch"],
        "test": ["test_goals", "test_runs", "test_episodes", "dump_runs"],
    }

    def validate(self):
        if self.env not in envs_mod.FAMILIES:
            raise ConfigError(f"unknown env '{self.env}'")
        if self.algo not in ("pearl", "varibad"):
            raise ConfigError(f"unknown algo '{self.algo}'")
        if self.strategy not in replay_mod.STRATEGIES:
            raise ConfigError(f"unknown strategy '{self.strategy}'")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        return self

    @property
    def run_name(self):
        return f"{self.env}-{self.algo}-{self.strategy}-{self.seed}"

    def run_dir(self):
        return os.path.join(self.out, self.run_name)

    # ---- INI round trip --------------------------------------------------

    def to_ini(self):
        cp = configparser.ConfigParser()
        d = asdict(self)
        for section, keys in self.SECTIONS.items():
            cp[section] = {k: str(d[k]) for k in keys}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text):
        cp = configparser.ConfigParser()
        cp.read_string(text)
        known = {k: f for f in fields(cls) for k in [f.name]}
        values = {}
        for section in cp.sections():
            if section not in cls.SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in cp[section].items():
                if key not in cls.SECTIONS[section]:
                    raise ConfigError(f"unknown key '{key}' in section [{section}]")
                values[key] = _parse_field(known[key], raw)
        return cls(**values).validate()

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_ini(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_ini())

    def apply_overrides(self, **overrides):
        known = {f.name: f for f in fields(self)}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown config key '{key}'")
            setattr(self, key, _parse_field(known[key], str(value)))
        return self.validate()

    def apply_quick(self):
        """Smoke-scale overrides for fast end-to-end runs."""
        self.iterations = 2
        self.n_train_tasks = 4
        self.n_test_tasks = 2
        self.grad_steps = 2
        self.vae_steps = 1
        self.collect_tasks = 2
        self.collect_episodes = 1
        self.eval_interval = 1
        self.eval_tasks = 2
        self.eval_episodes = 1
        self.checkpoint_interval = 1
        self.batch_size = 16
        self.hidden = "16,16"
        self.gru_hidden = 8
        self.dec_hidden = "8"
        self.context_len = 30
        self.test_goals = 2
        self.test_runs = 2
        self.test_episodes = 2
        self.dump_runs = 1
        return self


def _parse_field(f, raw):
    if f.type in ("int", int):
        return int(raw)
    if f.type in ("float", float):
        return float(raw)
    if f.type in ("bool", bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean '{raw}' for '{f.name}'")
    return raw


def _hidden_tuple(s):
    return tuple(int(x) for x in str(s).split(",") if x.strip())


def build_agent(config, rng):
    obs_dim = envs_mod.OBS_DIMS[config.env]
    act_dim = envs_mod.ACTION_DIMS[config.env]
    sac_hyper = sac_mod.SacHyper(
        gamma=config.gamma, tau_polyak=config.tau_polyak, lr=config.lr,
        batch_size=config.batch_size, alpha=config.alpha,
        hidden=_hidden_tuple(config.hidden))
    if config.algo == "pearl":
        hyper = PearlHyper(
            latent_dim=config.latent_dim, beta_kl=config.beta_kl,
            context_len=config.context_len, enc_lr=config.enc_lr,
            meta_batch=config.meta_batch, sac=sac_hyper)
        return PearlAgent(obs_dim, act_dim, hyper, rng)
    hyper = VaribadHyper(
        latent_dim=config.latent_dim, beta_kl=config.vae_beta_kl,
        gru_hidden=config.gru_hidden, dec_hidden=_hidden_tuple(config.dec_hidden),
        vae_lr=config.vae_lr, n_anchors=config.n_anchors,
        vae_batch=config.vae_batch, sac=sac_hyper)
    return VaribadAgent(obs_dim, act_dim, hyper, rng)


def task_split(config):
    return envs_mod.sample_tasks(config.env, config.n_train_tasks,
                                 config.n_test_tasks, config.task_seed)


# ---------------------------------------------------------------------------
# checkpointing


def _arrays_to_json(arrays):
    return {name: {"shape": list(a.shape), "data": a.ravel().tolist()}
            for name, a in arrays.items()}


def _arrays_from_json(obj):
    return {name: np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
            for name, rec in obj.items()}


def agent_state(agent):
    if isinstance(agent, PearlAgent):
        enc = {"encoder": agent.encoder.state()}
    else:
        enc = {"vae": agent.vae.state()}
    return {
        **{k: _pset_state_json(v) for k, v in enc.items()},
        "actor": _pset_state_json_raw(agent.sac.actor.state()),
        "critics": _pset_state_json_raw(agent.sac.critics.state()),
        "targets": _arrays_to_json(agent.sac.targets),
    }


def _pset_state_json(state_holder):
    return _pset_state_json_raw(state_holder)


def _pset_state_json_raw(state):
    return {
        "params": _arrays_to_json(state["params"]),
        "m": _arrays_to_json(state["m"]),
        "v": _arrays_to_json(state["v"]),
        "t": state["t"],
    }


def _pset_state_from_json(obj):
    return {
        "params": _arrays_from_json(obj["params"]),
        "m": _arrays_from_json(obj["m"]),
        "v": _arrays_from_json(obj["v"]),
        "t": obj["t"],
    }


def load_agent_state(agent, state):
    if isinstance(agent, PearlAgent):
        agent.encoder.load_state(_pset_state_from_json(state["encoder"]))
    else:
        agent.vae.load_state(_pset_state_from_json(state["vae"]))
    agent.sac.actor.load_state(_pset_state_from_json(state["actor"]))
    agent.sac.critics.load_state(_pset_state_from_json(state["critics"]))
    agent.sac.targets = _arrays_from_json(state["targets"])


def save_checkpoint(path, config, agent, iteration, rng):
    payload = {
        "config": {f.name: getattr(config, f.name) for f in fields(config)},
        "iteration": iteration,
        "agent": agent_state(agent),
        "rng": rng.bit_generator.state,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path, config=None):
    """Rebuild (config, agent, iteration, rng) from a checkpoint file.
    When `config` is given, its architecture keys must match the stored run."""
    with open(path) as fh:
        payload = json.load(fh)
    stored = ExperimentConfig(**payload["config"]).validate()
    if config is not None:
        for key in ("env", "algo", "latent_dim", "hidden", "gru_hidden",
                    "dec_hidden"):
            if getattr(config, key) != getattr(stored, key):
                raise ConfigError(
                    f"checkpoint/config mismatch on '{key}': "
                    f"{getattr(stored, key)!r} vs {getattr(config, key)!r}")
    rng = np.random.default_rng()
    rng.bit_generator.state = payload["rng"]
    agent = build_agent(stored, np.random.default_rng(0))
    load_agent_state(agent, payload["agent"])
    return stored, agent, payload["iteration"], rng


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows, mode="w"):
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh)
        if mode == "w":
            w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


# ---------------------------------------------------------------------------
# training


def evaluate(agent, config, test_tasks, rng):
    """Mean adaptation return over held-out tasks (the training-curve point)."""
    rets = []
    n = min(config.eval_tasks, len(test_tasks))
    for task in test_tasks[:n]:
        returns, *_ = agent.adapt(config.env, task, config.eval_episodes, rng,
                                  stochastic=False)
        rets.append(np.mean(returns))
    return float(np.mean(rets))


METRICS_HEADER = ["iteration", "train_return", "critic_loss", "actor_loss",
                  "aux", "eval_return"]


def run_meta_training(config, resume=False, log=None):
    """Full meta-training loop; returns the run directory."""
    config.validate()
    run_dir = config.run_dir()
    os.makedirs(run_dir, exist_ok=True)
    config.save(os.path.join(run_dir, "config.ini"))
    metrics_path = os.path.join(run_dir, "metrics.csv")
    ckpt_path = os.path.join(run_dir, "checkpoint.json")
    buffer_path = os.path.join(run_dir, "buffer.ndjson")

    split = task_split(config)
    start_iter = 0
    if resume and os.path.exists(ckpt_path):
        _, agent, start_iter, rng = load_checkpoint(ckpt_path, config)
        buffers = _make_buffers(config, agent)
        if os.path.exists(buffer_path):
            loaded = replay_mod.ReplayBuffer.load(
                buffer_path, strategy=config.strategy, capacity=config.capacity)
            loaded.iteration = start_iter
            buffers = _rewire_buffers(config, agent, loaded, buffers)
        _truncate_metrics(metrics_path, start_iter)
    else:
        rng = np.random.default_rng(config.seed)
        agent = build_agent(config, rng)
        buffers = _make_buffers(config, agent)
        write_csv(metrics_path, METRICS_HEADER, [])

    for it in range(start_iter, config.iterations):
        for buf in {id(b): b for b in buffers}.values():
            buf.begin_iteration()
        metrics = _train_iteration(agent, config, buffers, split.train, rng)
        eval_ret = ""
        if config.eval_interval and (it + 1) % config.eval_interval == 0:
            eval_ret = evaluate(agent, config, split.test, rng)
        row = [it, metrics["train_return"], metrics["critic_loss"],
               metrics["actor_loss"],
               metrics.get("kl", metrics.get("elbo", float("nan"))), eval_ret]
        write_csv(metrics_path, METRICS_HEADER, [row], mode="a")
        if log:
            log(f"iter {it}: train_return={metrics['train_return']:.3f}"
                + (f" eval_return={eval_ret:.3f}" if eval_ret != "" else ""))
        if config.checkpoint_interval and (it + 1) % config.checkpoint_interval == 0:
            save_checkpoint(ckpt_path, config, agent, it + 1, rng)
            buffers[0].save(buffer_path)
    save_checkpoint(ckpt_path, config, agent, config.iterations, rng)
    return run_dir


def _make_buffers(config, agent):
    rl = replay_mod.ReplayBuffer(strategy=config.strategy, capacity=config.capacity)
    if config.algo == "pearl":
        enc_strategy = config.strategy
        if config.clear_encoder_only and config.strategy == replay_mod.SHORT:
            rl = replay_mod.ReplayBuffer(strategy=replay_mod.LONG,
                                         capacity=config.capacity)
            enc = replay_mod.ReplayBuffer(strategy=replay_mod.SHORT,
                                          capacity=config.capacity)
            return [rl, enc]
        enc = replay_mod.ReplayBuffer(strategy=enc_strategy, capacity=config.capacity)
        return [rl, enc]
    return [rl]


def _rewire_buffers(config, agent, loaded, buffers):
    if config.algo == "pearl":
        # one persisted stream feeds both buffers on resume
        other = replay_mod.ReplayBuffer(strategy=buffers[1].strategy,
                                        capacity=config.capacity)
        for tid, traj in loaded._trajs:
            other.insert_trajectory(tid, traj)
        other.iteration = loaded.iteration
        return [loaded, other]
    return [loaded]


def _train_iteration(agent, config, buffers, train_tasks, rng):
    if config.algo == "pearl":
        rl_buffer, enc_buffer = buffers
        return agent.train_iteration(
            rl_buffer, enc_buffer, config.env, train_tasks, rng,
            n_collect_tasks=config.collect_tasks,
            n_collect_eps=config.collect_episodes,
            n_grad=config.grad_steps)
    return agent.train_iteration(
        buffers[0], config.env, train_tasks, rng,
        n_collect_tasks=config.collect_tasks,
        n_collect_eps=config.collect_episodes,
        n_vae=config.vae_steps, n_rl=config.grad_steps)


def _truncate_metrics(path, start_iter):
    if not os.path.exists(path):
        write_csv(path, METRICS_HEADER, [])
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [r for r in rows[1:] if r and int(r[0]) < start_iter]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        w.writerows(kept)


# ---------------------------------------------------------------------------
# meta-testing


def run_meta_testing(checkpoint_path, config):
    """Adaptation protocol on the test split: per-episode returns, latent
    embeddings at the last step of the final episode, and behavior
    trajectory dumps for the first `dump_runs` runs of each task."""
    stored, agent, _, _ = load_checkpoint(checkpoint_path, config)
    config.validate()
    run_dir = config.run_dir()
    os.makedirs(run_dir, exist_ok=True)
    split = task_split(config)
    tasks = split.test[: config.test_goals]
    k = config.latent_dim

    emb_header = (["task_id", "run_id", "episode"]
                  + [f"v{i+1}" for i in range(k)]
                  + [f"var{i+1}" for i in range(k)])
    emb_rows, ret_rows, traj_records = [], [], []
    rng = np.random.default_rng(config.seed + 10_000)
    for tid, task in enumerate(tasks):
        for run in range(config.test_runs):
            if config.algo == "pearl":
                returns, posteriors, trajs = agent.adapt(
                    config.env, task, config.test_episodes, rng)
                mu, var = posteriors[-1].mu, posteriors[-1].var
            else:
                returns, belief, trajs = agent.adapt(
                    config.env, task, config.test_episodes, rng)
                mu, var = belief.mu, belief.var
            emb_rows.append([tid, run, config.test_episodes]
                            + list(mu) + list(var))
            for ep, ret in enumerate(returns):
                ret_rows.append([tid, run, ep + 1, ret])
            if run < config.dump_runs:
                for ep, traj in enumerate(trajs):
                    for t in range(len(traj)):
                        traj_records.append({
                            "task_id": tid, "run_id": run, "episode": ep + 1,
                            "t": t, "s": traj.s[t].tolist(),
                            "a": traj.a[t].tolist(), "r": float(traj.r[t]),
                            "s2": traj.s2[t].tolist(),
                            "done": bool(traj.done[t]),
                        })

    write_csv(os.path.join(run_dir, "embeddings.csv"), emb_header, emb_rows)
    write_csv(os.path.join(run_dir, "returns.csv"),
              ["task_id", "run_id", "episode", "return"], ret_rows)
    _write_curve(run_dir, ret_rows, config)
    with open(os.path.join(run_dir, "trajectories.ndjson"), "w") as fh:
        for rec in traj_records:
            fh.write(json.dumps(rec) + "\n")
    return run_dir


def _returns_matrix(ret_rows, n_episodes):
    by_run = {}
    for tid, run, ep, ret in ret_rows:
        by_run.setdefault((tid, run), [None] * n_episodes)[ep - 1] = ret
    return np.array([v for v in by_run.values()], dtype=np.float64)


def _write_curve(run_dir, ret_rows, config):
    m = _returns_matrix(ret_rows, config.test_episodes)
    means, se = analysis.adaptation_curve(m)
    rows = [[ep + 1, means[ep], se[ep], config.algo, config.strategy, config.env]
            for ep in range(config.test_episodes)]
    write_csv(os.path.join(run_dir, "curve.csv"),
              ["episode", "mean_return", "stderr", "algorithm", "strategy", "env"],
              rows)


# ---------------------------------------------------------------------------
# compare


def _read_returns(run_dir):
    path = os.path.join(run_dir, "returns.csv")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append((int(rec["task_id"]), int(rec["run_id"]),
                         int(rec["episode"]), float(rec["return"])))
    return rows


def _read_run_config(run_dir):
    return ExperimentConfig.load(os.path.join(run_dir, "config.ini"))


def compare(run_dirs, out_path, n_boot=1000, seed=0):
    """Join adaptation curves across strategies; per-episode deltas
    (short minus long) with bootstrap confidence intervals.

    Returns (rows, summary text); also writes a CSV to `out_path`."""
    configs = [_read_run_config(d) for d in run_dirs]
    envs_ = {c.env for c in configs}
    algos = {c.algo for c in configs}
    if len(envs_) > 1 or len(algos) > 1:
        raise ConfigError("compare requires matching env and algorithm")
    by_strategy = {}
    for d, c in zip(run_dirs, configs):
        by_strategy.setdefault(c.strategy, []).extend(_read_returns(d))
    if len(by_strategy) < 2:
        raise ConfigError("compare needs runs from both strategies")

    rng = np.random.default_rng(seed)
    episodes = sorted({r[2] for rows in by_strategy.values() for r in rows})
    out_rows = []
    lines = []
    for ep in episodes:
        short = np.array([r[3] for r in by_strategy.get("short", []) if r[2] == ep])
        long_ = np.array([r[3] for r in by_strategy.get("long", []) if r[2] == ep])
        delta = short.mean() - long_.mean()
        boots = []
        for _ in range(n_boot):
            s = short[rng.integers(len(short), size=len(short))].mean()
            l = long_[rng.integers(len(long_), size=len(long_))].mean()
            boots.append(s - l)
        lo, hi = np.percentile(boots, [2.5, 97.5])
        out_rows.append([ep, delta, lo, hi, next(iter(algos)), next(iter(envs_))])
        lines.append(f"episode {ep}: short-long delta {delta:+.3f} "
                     f"(95% CI [{lo:+.3f}, {hi:+.3f}])")
    write_csv(out_path, ["episode", "delta_short_minus_long", "ci_lo", "ci_hi",
                         "algorithm", "env"], out_rows)
    return out_rows, "\n".join(lines)


# ---------------------------------------------------------------------------
# oracle benchmark


def oracle_eval(config, out_path, checkpoint_path=None, n_goals=10,
                noise=oracle_mod.DEFAULT_NOISE):
    """Posterior-greedy benchmark on the test protocol.

    Writes per-(task, run, episode) returns; when a checkpoint is given,
    also reports a belief-agreement score of the learned latents."""
    config.validate()
    if config.env not in ("point", "semicircle"):
        raise ConfigError(f"oracle benchmark does not support '{config.env}'")
    split = task_split(config)
    tasks = split.test[: config.test_goals]
    task_set = oracle_mod.semicircle_task_set(config.env, n_goals=n_goals)
    env = envs_mod.MetaEnv(config.env)
    rng = np.random.default_rng(config.seed + 20_000)

    rows = []
    for tid, task in enumerate(tasks):
        for run in range(config.test_runs):
            belief = task_set.prior.copy()
            for ep in range(config.test_episodes):
                total, _, belief = oracle_mod.posterior_greedy_rollout(
                    task_set, belief, env, task, env.horizon, rng, noise=noise)
                rows.append([tid, run, ep + 1, total])
    write_csv(out_path, ["task_id", "run_id", "episode", "return"], rows)

    agreement = None
    if checkpoint_path is not None:
        agreement = _agreement_score(checkpoint_path, config, task_set, rng)
    return rows, agreement


def _agreement_score(checkpoint_path, config, task_set, rng):
    """Probe: per-test-task learned latents vs exact-posterior argmax.

    The learned latent is probed with 1-nearest-neighbor against per-task
    mean latents (posterior-sampling agent) or by decoded-reward argmax
    over the discretized goals (belief-conditioned agent).
    """
    stored, agent, _, _ = load_checkpoint(checkpoint_path, config)
    split = task_split(config)
    tasks = split.test[: config.test_goals]
    env = envs_mod.MetaEnv(config.env)
    exact_beliefs, predictions = [], []
    refs = None
    if config.algo == "pearl":
        refs = []
        for task in split.train[: max(2, len(task_set.tasks))]:
            returns, posteriors, _ = agent.adapt(config.env, task, 2, rng)
            refs.append(posteriors[-1].mu)
        refs = np.stack(refs)
        ref_goal_idx = [oracle_mod.nearest_goal_index(task_set, t.goal)
                        for t in split.train[: len(refs)]]
    for task in tasks:
        if config.algo == "pearl":
            returns, posteriors, trajs = agent.adapt(config.env, task, 2, rng)
            mu = posteriors[-1].mu
            nn_idx = int(np.argmin(np.linalg.norm(refs - mu, axis=1)))
            predictions.append(ref_goal_idx[nn_idx])
        else:
            returns, belief, trajs = agent.adapt(config.env, task, 2, rng)
            z = belief.mu
            scores = [agent.predict_reward(
                z, np.asarray(t.goal), np.zeros(envs_mod.ACTION_DIMS[config.env]))
                for t in task_set.tasks]
            predictions.append(int(np.argmax(scores)))
        transitions = [envs_mod.Transition(s=trajs[-1].s[t], a=trajs[-1].a[t],
                                           r=trajs[-1].r[t], s2=trajs[-1].s2[t],
                                           done=bool(trajs[-1].done[t]))
                       for t in range(len(trajs[-1]))]
        exact_beliefs.append(oracle_mod.exact_posterior(task_set, transitions))
    return oracle_mod.belief_agreement(exact_beliefs, predictions)
