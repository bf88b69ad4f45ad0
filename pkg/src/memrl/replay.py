"""Trajectory replay with long- and short-memory sampling strategies.

LongMemory keeps all history up to a transition capacity (whole-trajectory
eviction, oldest first).  ShortMemory drops everything at the start of each
training iteration, so samplers only ever see data collected in the current
iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

LONG = "long"
SHORT = "short"
STRATEGIES = (LONG, SHORT)


class EmptyBufferError(RuntimeError):
    """Sampling was attempted before any data was collected."""


@dataclass
class Trajectory:
    """One episode: aligned per-step arrays plus optional extras
    (e.g. the belief vectors logged at collection time)."""

    s: np.ndarray       # (T, obs_dim)
    a: np.ndarray       # (T, act_dim)
    r: np.ndarray       # (T,)
    s2: np.ndarray      # (T, obs_dim)
    done: np.ndarray    # (T,)
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.r)

    def tuples(self):
        """(T, obs+act+1+obs) context matrix: rows (s, a, r, s')."""
        return np.concatenate(
            [self.s, self.a, self.r[:, None], self.s2], axis=1
        )


@dataclass
class RLBatch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    task_ids: np.ndarray
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.r)


class ReplayBuffer:
    def __init__(self, strategy=LONG, capacity=1_000_000):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy '{strategy}'")
        self.strategy = strategy
        self.capacity = int(capacity)
        self.iteration = 0
        self._trajs = []  # (task_id, Trajectory), insertion order

    # ---- bookkeeping -----------------------------------------------------

    @property
    def n_transitions(self):
        return sum(len(t) for _, t in self._trajs)

    @property
    def n_trajectories(self):
        return len(self._trajs)

    def task_ids(self):
        return sorted({tid for tid, _ in self._trajs})

    def trajectories(self, task_id=None):
        if task_id is None:
            return [t for _, t in self._trajs]
        return [t for tid, t in self._trajs if tid == task_id]

    def begin_iteration(self):
        """ShortMemory: drop everything; LongMemory: no-op.  Counter bumps
        either way."""
        self.iteration += 1
        if self.strategy == SHORT:
            self._trajs.clear()

    def insert_trajectory(self, task_id, traj):
        if len(traj) == 0:
            raise ValueError("empty trajectory")
        self._trajs.append((task_id, traj))
        if self.strategy == LONG:
            while self.n_transitions > self.capacity and len(self._trajs) > 1:
                self._trajs.pop(0)

    # ---- samplers --------------------------------------------------------

    def sample_rl_batch(self, batch_size, rng, stratified=False):
        """Uniform transitions across the buffer; `stratified` first picks
        tasks uniformly, then transitions within each picked task."""
        if not self._trajs:
            raise EmptyBufferError("replay buffer is empty")
        if stratified:
            tids = self.task_ids()
            picks = [tids[i] for i in rng.integers(len(tids), size=batch_size)]
            rows = [self._random_transition(rng, tid) for tid in picks]
        else:
            lengths = np.array([len(t) for _, t in self._trajs])
            cum = np.cumsum(lengths)
            flat = rng.integers(cum[-1], size=batch_size)
            rows = []
            for f in flat:
                ti = int(np.searchsorted(cum, f, side="right"))
                step = int(f - (cum[ti - 1] if ti else 0))
                rows.append((self._trajs[ti][0], self._trajs[ti][1], step))
        return self._pack(rows)

    def _random_transition(self, rng, task_id):
        trajs = self.trajectories(task_id)
        lengths = np.array([len(t) for t in trajs])
        f = int(rng.integers(lengths.sum()))
        cum = np.cumsum(lengths)
        ti = int(np.searchsorted(cum, f, side="right"))
        return task_id, trajs[ti], int(f - (cum[ti - 1] if ti else 0))

    @staticmethod
    def _pack(rows):
        tids = np.array([tid for tid, _, _ in rows])
        s = np.stack([t.s[i] for _, t, i in rows])
        a = np.stack([t.a[i] for _, t, i in rows])
        r = np.array([t.r[i] for _, t, i in rows])
        s2 = np.stack([t.s2[i] for _, t, i in rows])
        done = np.array([t.done[i] for _, t, i in rows], dtype=np.float64)
        extras = {}
        if rows and rows[0][1].extras:
            for key in rows[0][1].extras:
                extras[key] = np.stack([t.extras[key][i] for _, t, i in rows])
        return RLBatch(s=s, a=a, r=r, s2=s2, done=done, task_ids=tids, extras=extras)

    def sample_context(self, task_id, context_len, mode, rng):
        """Context tuples for one task.

        mode="recent": the last `context_len` (s, a, r, s') tuples in
        insertion order, concatenated across trajectory boundaries.
        mode="uniform_segment": a random contiguous segment of length
        <= context_len from one stored trajectory.
        """
        trajs = self.trajectories(task_id)
        if not trajs:
            raise EmptyBufferError(f"no trajectories stored for task {task_id}")
        if mode == "recent":
            stream = np.concatenate([t.tuples() for t in trajs], axis=0)
            return stream[-context_len:]
        if mode == "uniform_segment":
            traj = trajs[int(rng.integers(len(trajs)))]
            tup = traj.tuples()
            seg = min(context_len, len(tup))
            start = int(rng.integers(len(tup) - seg + 1))
            return tup[start : start + seg]
        raise ValueError(f"unknown context mode '{mode}'")

    def sample_trajectory(self, task_id, rng):
        """Uniform over the task's stored trajectories (VAE-style sampling)."""
        trajs = self.trajectories(task_id)
        if not trajs:
            raise EmptyBufferError(f"no trajectories stored for task {task_id}")
        return trajs[int(rng.integers(len(trajs)))]

    # ---- persistence -----------------------------------------------------

    def save(self, path):
        """Newline-delimited JSON, one object per transition."""
        with open(path, "w") as fh:
            for episode, (tid, traj) in enumerate(self._trajs):
                for t in range(len(traj)):
                    rec = {
                        "task_id": int(tid),
                        "episode": episode,
                        "t": t,
                        "s": traj.s[t].tolist(),
                        "a": traj.a[t].tolist(),
                        "r": float(traj.r[t]),
                        "s2": traj.s2[t].tolist(),
                        "done": bool(traj.done[t]),
                    }
                    if traj.extras:
                        rec["extras"] = {k: v[t].tolist()
                                         for k, v in traj.extras.items()}
                    fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path, strategy=LONG, capacity=1_000_000):
        buf = cls(strategy=strategy, capacity=capacity)
        episodes = {}
        order = []
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                key = rec["episode"]
                if key not in episodes:
                    episodes[key] = (rec["task_id"], [])
                    order.append(key)
                episodes[key][1].append(rec)
        for key in order:
            tid, recs = episodes[key]
            recs.sort(key=lambda r: r["t"])
            extras = {}
            if "extras" in recs[0]:
                for key in recs[0]["extras"]:
                    extras[key] = np.array([r["extras"][key] for r in recs])
            traj = Trajectory(
                s=np.array([r["s"] for r in recs]),
                a=np.array([r["a"] for r in recs]),
                r=np.array([r["r"] for r in recs]),
                s2=np.array([r["s2"] for r in recs]),
                done=np.array([r["done"] for r in recs], dtype=bool),
                extras=extras,
            )
            buf.insert_trajectory(tid, traj)
        return buf
