"""Three meta-task families on dependency-free dynamics.

Families:
  - "point"      SparsePointRobot: 2-D point, sparse 0/1 reward inside a
                 goal radius, goals on the unit upper semicircle.
  - "semicircle" SemiCircleNav: 2-D point mass with momentum, dense reward
                 -||x - goal||_1 - 0.1 ||a||^2, goals on the semicircle.
  - "velmatch"   VelMatch1D: 1-D velocity integrator, dense tracking reward
                 -|v - v_goal| - 0.05 a^2 plus a +1 bonus within a band.

All rewards are computed by `model_reward`, a pure function of
(family, transition, task) shared with the exact belief oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("point", "semicircle", "velmatch")

HORIZONS = {"point": 60, "semicircle": 100, "velmatch": 60}
ACTION_DIMS = {"point": 2, "semicircle": 2, "velmatch": 1}
OBS_DIMS = {"point": 2, "semicircle": 2, "velmatch": 2}

POINT_STEP_SCALE = 0.1
GOAL_RADIUS = 0.2
START_RADIUS = 0.1
SEMI_MOMENTUM = 0.8
SEMI_VMAX = 0.15
VEL_ACTION_SCALE = 0.3
VEL_BOUNDS = (-1.0, 4.0)
VEL_SPARSE_EPS = 0.1
VEL_DT = 0.1


@dataclass(frozen=True)
class Task:
    """One MDP from a family: goal (x, y) for navigation, v_goal for velmatch."""

    family: str
    params: tuple

    @property
    def goal(self):
        return np.asarray(self.params, dtype=np.float64)

    @property
    def v_goal(self):
        return float(self.params[0])


@dataclass(frozen=True)
class TaskSplit:
    train: list
    test: list


@dataclass(frozen=True)
class EnvState:
    obs: np.ndarray          # what the agent sees
    t: int
    done: bool
    vel: np.ndarray = field(default_factory=lambda: np.zeros(0))  # hidden momentum (semicircle)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool


def sample_tasks(family, n_train, n_test, seed):
    """Disjoint train/test task split; deterministic in `seed`.

    Navigation goals are (cos th, sin th) with th ~ U[0, pi]; velmatch
    targets are v_goal ~ U[0, 3].
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family '{family}'")
    if n_train <= 0 or n_test <= 0:
        raise ValueError("need n_train, n_test > 0")
    rng = np.random.default_rng(seed)
    tasks = []
    seen = set()
    while len(tasks) < n_train + n_test:
        if family == "velmatch":
            params = (float(rng.uniform(0.0, 3.0)),)
        else:
            theta = rng.uniform(0.0, np.pi)
            params = (float(np.cos(theta)), float(np.sin(theta)))
        if params in seen:  # almost surely never; keeps the split disjoint
            continue
        seen.add(params)
        tasks.append(Task(family, params))
    return TaskSplit(train=tasks[:n_train], test=tasks[n_train:])


def clip_action(action, family):
    a = np.atleast_1d(np.asarray(action, dtype=np.float64))
    if a.shape != (ACTION_DIMS[family],):
        raise ValueError(f"action shape {a.shape} invalid for '{family}'")
    return np.clip(a, -1.0, 1.0)


def model_reward(family, s, a_clipped, s2, task):
    """Closed-form reward of a transition under `task` (used by env and oracle).

    `s2` carries the post-step observation; for velmatch its second entry
    is the new velocity.
    """
    if family == "point":
        dist = np.linalg.norm(s2 - task.goal)
        return 1.0 if dist <= GOAL_RADIUS else 0.0
    if family == "semicircle":
        return float(-np.abs(s2 - task.goal).sum() - 0.1 * np.dot(a_clipped, a_clipped))
    if family == "velmatch":
        v2 = s2[1]
        sparse = 1.0 if abs(v2 - task.v_goal) <= VEL_SPARSE_EPS else 0.0
        return float(-abs(v2 - task.v_goal) - 0.05 * np.dot(a_clipped, a_clipped) + sparse)
    raise ValueError(f"unknown family '{family}'")


def reset(task, rng):
    """Initial EnvState: navigation starts uniform on the radius-0.1 disk
    around the origin; velmatch starts at rest."""
    family = task.family
    if family == "velmatch":
        obs = np.zeros(2)  # (position, velocity)
        return EnvState(obs=obs, t=0, done=False)
    r = START_RADIUS * np.sqrt(rng.uniform())
    phi = rng.uniform(0.0, 2.0 * np.pi)
    obs = np.array([r * np.cos(phi), r * np.sin(phi)])
    vel = np.zeros(2) if family == "semicircle" else np.zeros(0)
    return EnvState(obs=obs, t=0, done=False, vel=vel)


def _finish(family, state, obs2, reward, vel=None):
    horizon = HORIZONS[family]
    t2 = state.t + 1
    done = t2 >= horizon
    new = EnvState(obs=obs2, t=t2, done=done,
                   vel=state.vel if vel is None else vel)
    return new, reward, done


def step_sparse_point_robot(state, action, task):
    a = clip_action(action, "point")
    pos2 = state.obs + POINT_STEP_SCALE * a
    r = model_reward("point", state.obs, a, pos2, task)
    return _finish("point", state, pos2, r)


def step_semicircle_nav(state, action, task):
    a = clip_action(action, "semicircle")
    vel2 = SEMI_MOMENTUM * state.vel + (1.0 - SEMI_MOMENTUM) * a * SEMI_VMAX
    pos2 = state.obs + vel2
    r = model_reward("semicircle", state.obs, a, pos2, task)
    return _finish("semicircle", state, pos2, r, vel=vel2)


def step_velmatch(state, action, task):
    a = clip_action(action, "velmatch")
    x, v = state.obs
    v2 = float(np.clip(v + VEL_ACTION_SCALE * a[0], *VEL_BOUNDS))
    obs2 = np.array([x + VEL_DT * v2, v2])
    r = model_reward("velmatch", state.obs, a, obs2, task)
    return _finish("velmatch", state, obs2, r)


_STEP_FNS = {
    "point": step_sparse_point_robot,
    "semicircle": step_semicircle_nav,
    "velmatch": step_velmatch,
}


class MetaEnv:
    """Stateful wrapper over the pure step functions, one task at a time."""

    def __init__(self, family):
        if family not in FAMILIES:
            raise ValueError(f"unknown family '{family}'")
        self.family = family
        self.horizon = HORIZONS[family]
        self.obs_dim = OBS_DIMS[family]
        self.action_dim = ACTION_DIMS[family]
        self.task = None
        self.state = None

    def reset(self, task, rng):
        if task.family != self.family:
            raise ValueError("task family does not match environment")
        self.task = task
        self.state = reset(task, rng)
        return self.state.obs.copy()

    def step(self, action):
        if self.state is None or self.state.done:
            raise RuntimeError("step called on unreset or finished environment")
        self.state, r, done = _STEP_FNS[self.family](self.state, action, self.task)
        return self.state.obs.copy(), r, done
