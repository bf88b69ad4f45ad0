"""The paper's core variable: what the replay buffer remembers.

Both memory strategies see the same stream of trajectories; the only
difference is what survives the start of each training iteration.  The
long strategy keeps everything (stale early data included); the short
strategy starts every iteration empty, so gradient steps only ever see
data collected by the current policy.
"""

import numpy as np

from memrl.replay import ReplayBuffer, Trajectory


def fake_traj(tag, n=5):
    idx = np.full(n, float(tag))
    return Trajectory(s=np.stack([idx, idx], 1), a=np.stack([idx], 1),
                      r=idx.copy(), s2=np.stack([idx, idx], 1),
                      done=np.zeros(n, dtype=bool))


for strategy in ("long", "short"):
    buf = ReplayBuffer(strategy)
    print(f"[{strategy}]")
    for iteration in range(3):
        buf.begin_iteration()
        buf.insert_trajectory(task_id=0, traj=fake_traj(iteration))
        ages = sorted({int(t.r[0]) for t in buf.trajectories()})
        print(f"  after iteration {iteration}: {buf.n_transitions:2d} "
              f"transitions, data from iterations {ages}")
    print()

print("long memory trains on a mixture of every policy it ever ran;\n"
      "short memory trains on-distribution but must re-collect everything.")
