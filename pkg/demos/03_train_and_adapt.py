"""Train a small belief-conditioned agent and watch it adapt.

Runs a deliberately short training session (a few minutes) on the sparse
point robot, then rolls 5-episode meta-episodes on held-out goals and
prints the adaptation curve: episode 1 is exploration, later episodes
cash in the belief.  For acceptance-scale results use the `memrl train`
CLI with more iterations.
"""

import os

import numpy as np

from memrl import harness
from memrl.harness import ExperimentConfig

cfg = ExperimentConfig(
    env="point", algo="varibad", strategy="long", seed=0, out="runs-demo",
    iterations=40, n_train_tasks=10, n_test_tasks=5, task_seed=191,
    collect_tasks=10, collect_episodes=4, grad_steps=125,
    hidden="64,64", batch_size=256, tau_polyak=0.01, gamma=0.95, alpha=0.1,
    latent_dim=2, vae_beta_kl=0.01, vae_lr=3e-3, gru_hidden=32,
    dec_hidden="32", vae_steps=6, vae_batch=32,
    eval_interval=10, checkpoint_interval=0)

print(f"training {cfg.run_name} for {cfg.iterations} iterations ...")
run_dir = harness.run_meta_training(cfg, log=print)

_, agent, _, _ = harness.load_checkpoint(os.path.join(run_dir, "checkpoint.json"))
split = harness.task_split(cfg)
rng = np.random.default_rng(1)

curves = []
for task in split.test:
    for _ in range(8):
        returns, belief, _ = agent.adapt("point", task, 5, rng)
        curves.append(returns)
curves = np.array(curves)
print("\nadaptation curve on held-out goals (mean return per episode):")
for ep, mean in enumerate(curves.mean(axis=0)):
    print(f"  episode {ep + 1}: {mean:6.2f}")
