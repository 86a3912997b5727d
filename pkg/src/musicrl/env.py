"""Desk-scale 2D point environments with an explicit agent/surrounding split.

Two tasks share one kinematic contact model:

* ``point-push``: a small agent disc pushes an object disc towards a goal.
* ``point-nav``: the agent has to reach a ball (which it can also push).

The observation is ``agent_pos ++ object_pos ++ object_vel`` (6 floats). The
goal is kept out of the observation and handed to the policy separately.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import DimensionError

log = logging.getLogger(__name__)

ENV_NAMES = ("point-push", "point-nav")

ARENA_LOW, ARENA_HIGH = 0.0, 1.0
AGENT_RADIUS = 0.03
OBJECT_RADIUS = 0.05
CONTACT_DISTANCE = AGENT_RADIUS + OBJECT_RADIUS
STEP_SCALE = 0.05
VELOCITY_DECAY = 0.8
PUSH_TOLERANCE = 0.05
NAV_TOLERANCE = 0.08
SPAWN_LOW, SPAWN_HIGH = 0.2, 0.8
MIN_SPAWN_DISTANCE = 0.1
OBS_CLIP = 200.0
SUCCESS_REWARD = 1.0
DEFAULT_EPISODE_LENGTH = 50

# contact leaves the pair at exactly CONTACT_DISTANCE up to rounding
_NAV_SLACK = 1e-6

OBS_DIM = 6
GOAL_DIM = 2
ACTION_DIM = 2
OBS_LAYOUT: Dict[str, Tuple[int, ...]] = {
    "agent_pos": (0, 1),
    "object_pos": (2, 3),
    "object_vel": (4, 5),
}


@dataclass(frozen=True)
class StateSplit:
    """Which observation entries form the agent state and the surrounding state."""

    agent_indices: Tuple[int, ...]
    surrounding_indices: Tuple[int, ...]

    def __post_init__(self):
        a = tuple(int(i) for i in self.agent_indices)
        s = tuple(int(i) for i in self.surrounding_indices)
        object.__setattr__(self, "agent_indices", a)
        object.__setattr__(self, "surrounding_indices", s)
        if not a or not s:
            raise ValueError("agent and surrounding index sets must both be non-empty")
        if min(a + s) < 0:
            raise ValueError("indices must be non-negative")
        if len(set(a)) != len(a) or len(set(s)) != len(s):
            raise ValueError("duplicate index in state split")
        if set(a) & set(s):
            raise ValueError(f"agent {a} and surrounding {s} indices overlap")

    @property
    def agent_dim(self) -> int:
        return len(self.agent_indices)

    @property
    def surrounding_dim(self) -> int:
        return len(self.surrounding_indices)

    @classmethod
    def from_names(cls, agent: Sequence[str], surrounding: Sequence[str]) -> "StateSplit":
        """Build a split from ``OBS_LAYOUT`` component names."""
        try:
            a = [i for name in agent for i in OBS_LAYOUT[name]]
            s = [i for name in surrounding for i in OBS_LAYOUT[name]]
        except KeyError as exc:
            raise ValueError(f"unknown observation component {exc.args[0]!r}; "
                             f"known: {sorted(OBS_LAYOUT)}") from None
        return cls(tuple(a), tuple(s))


DEFAULT_SPLIT = StateSplit((0, 1), (2, 3))


def split_observation(obs, split: StateSplit) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(agent_state, surrounding_state)``; works on the last axis."""
    obs = np.asarray(obs)
    width = obs.shape[-1]
    top = max(split.agent_indices + split.surrounding_indices)
    if top >= width:
        raise DimensionError(f"split index {top} out of range for observation width {width}")
    return obs[..., list(split.agent_indices)], obs[..., list(split.surrounding_indices)]


@dataclass(frozen=True)
class EnvState:
    kind: str
    agent_pos: np.ndarray
    object_pos: np.ndarray
    object_vel: np.ndarray
    goal: np.ndarray
    step_index: int = 0
    episode_length: int = DEFAULT_EPISODE_LENGTH


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    task_reward: float
    done: bool
    success: bool
    action_clamped: bool = False


def _check_kind(kind: str) -> None:
    if kind not in ENV_NAMES:
        raise ValueError(f"unknown environment {kind!r}; choose from {ENV_NAMES}")


def observe(state: EnvState) -> np.ndarray:
    obs = np.concatenate([state.agent_pos, state.object_pos, state.object_vel])
    return np.clip(obs, -OBS_CLIP, OBS_CLIP).astype(np.float32)


def reset(kind: str, rng: np.random.Generator,
          episode_length: int = DEFAULT_EPISODE_LENGTH) -> Tuple[EnvState, np.ndarray]:
    _check_kind(kind)
    agent = np.array([0.5, 0.5])
    while True:
        obj = rng.uniform(SPAWN_LOW, SPAWN_HIGH, size=2)
        if np.linalg.norm(obj - agent) >= MIN_SPAWN_DISTANCE:
            break
    goal = rng.uniform(SPAWN_LOW, SPAWN_HIGH, size=2)
    state = EnvState(kind, agent, obj, np.zeros(2), goal, 0, int(episode_length))
    return state, observe(state)


def _separate(mover: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Move ``mover`` along the anchor->mover line to contact distance."""
    d = mover - anchor
    dist = float(np.hypot(d[0], d[1]))
    if dist >= CONTACT_DISTANCE:
        return mover
    direction = d / dist if dist > 1e-12 else np.array([1.0, 0.0])
    return anchor + CONTACT_DISTANCE * direction


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, ARENA_LOW, ARENA_HIGH)


def is_success(state: EnvState) -> bool:
    if state.kind == "point-push":
        return float(np.linalg.norm(state.object_pos - state.goal)) <= PUSH_TOLERANCE
    return float(np.linalg.norm(state.agent_pos - state.object_pos)) <= NAV_TOLERANCE + _NAV_SLACK


def step(state: EnvState, action) -> Tuple[EnvState, StepResult]:
    """Advance one step. Actions outside [-1, 1] are clamped and flagged."""
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape != (ACTION_DIM,):
        raise DimensionError(f"action must have {ACTION_DIM} entries, got {a.shape}")
    clamped = bool(np.any(np.abs(a) > 1.0)) or not np.all(np.isfinite(a))
    if clamped:
        log.debug("action %s clamped to [-1, 1]", a)
        a = np.clip(np.nan_to_num(a), -1.0, 1.0)

    agent = _clamp(state.agent_pos + STEP_SCALE * a)
    obj_before = state.object_pos
    in_contact = np.linalg.norm(obj_before - agent) < CONTACT_DISTANCE
    if in_contact:
        obj = _separate(obj_before, agent)
    else:
        vel = VELOCITY_DECAY * state.object_vel
        obj = _separate(obj_before + vel, agent)
    obj = _clamp(obj)
    # A wall can stop the object; the agent is then the one held back.
    for _ in range(8):
        if np.linalg.norm(obj - agent) >= CONTACT_DISTANCE - 1e-12:
            break
        agent = _clamp(_separate(agent, obj))
        obj = _clamp(_separate(obj, agent))
    # velocity is the realised displacement, so wall stops zero it
    vel = obj - obj_before

    idx = state.step_index + 1
    new_state = replace(state, agent_pos=agent, object_pos=obj, object_vel=vel, step_index=idx)
    success = is_success(new_state)
    done = success or idx >= state.episode_length
    return new_state, StepResult(observe(new_state), SUCCESS_REWARD if success else 0.0,
                                 done, success, clamped)


def object_path_length(observations) -> float:
    """Total distance travelled by the object over an observation sequence."""
    obs = np.asarray(observations, dtype=np.float64)
    pos = obs[:, list(OBS_LAYOUT["object_pos"])]
    return float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))


def random_policy_baseline(kind: str = "point-push", n_episodes: int = 100, seed: int = 0,
                           episode_length: int = DEFAULT_EPISODE_LENGTH) -> float:
    """Mean object path length per episode under uniform random actions.

    Episodes run for the full length, matching how the trainer collects
    rollouts.
    """
    rng = np.random.default_rng(seed)
    totals = []
    for _ in range(n_episodes):
        state, obs = reset(kind, rng, episode_length)
        observations = [obs]
        for _ in range(episode_length):
            state, res = step(state, rng.uniform(-1.0, 1.0, size=ACTION_DIM))
            observations.append(res.observation)
        totals.append(object_path_length(observations))
    return float(np.mean(totals))
