"""Visualize what the belief encoder learned (Figures 6-7 analog).

Loads the checkpoint written by demos/03_train_and_adapt.py, collects the
final belief of many meta-episodes on held-out goals, and projects the
belief means to 2-D with PCA and exact t-SNE.  If the encoder carries
task information, runs on the same goal land close together and the
silhouette score is positive.
"""

import os
import sys

import numpy as np

from memrl import analysis, harness

ckpt = "runs-demo/point-varibad-long-0/checkpoint.json"
if not os.path.exists(ckpt):
    sys.exit("run demos/03_train_and_adapt.py first (writes " + ckpt + ")")

cfg, agent, _, _ = harness.load_checkpoint(ckpt)
split = harness.task_split(cfg)
rng = np.random.default_rng(2)

mus, labels = [], []
for tid, task in enumerate(split.test):
    for _ in range(20):
        _, belief, _ = agent.adapt(cfg.env, task, 5, rng)
        mus.append(belief.mu)
        labels.append(tid)
mus, labels = np.array(mus), np.array(labels)

sil = analysis.cluster_quality(mus, labels)
print(f"{len(mus)} belief embeddings on {len(split.test)} goals")
print(f"silhouette score by goal: {sil:+.3f}")

pca = analysis.pca_project(mus)
tsne, kl = analysis.tsne_project(mus, seed=0, return_kl=True)
print(f"t-SNE KL: {kl[0]:.3f} -> {kl[-1]:.3f}")

print("\nper-goal PCA centroids (goal angle vs embedding position):")
for tid, task in enumerate(split.test):
    c = pca[labels == tid].mean(axis=0)
    theta = float(np.arctan2(task.goal[1], task.goal[0]))
    print(f"  goal at {np.degrees(theta):6.1f} deg -> "
          f"({c[0]:+.3f}, {c[1]:+.3f})")
