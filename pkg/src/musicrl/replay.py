"""Trajectory-structured replay with uniform and priority-weighted sampling.

Trajectories are stored whole and evicted whole. Prioritised sampling picks
a trajectory with probability proportional to ``(priority + eps) ** alpha``
and then a transition uniformly inside it, PER style.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)


class BufferEmptyError(LookupError):
    """Sampling was requested from a buffer that holds no transitions."""


class TrajectoryValidationError(ValueError):
    pass


@dataclass
class TrajectoryRecord:
    """One episode: ``L + 1`` observations and ``L`` actions/rewards."""

    observations: np.ndarray
    actions: np.ndarray
    goal: np.ndarray
    task_rewards: np.ndarray
    dones: Optional[np.ndarray] = None
    skill: int = -1
    priority: float = 1.0
    id: int = -1

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        self.goal = np.asarray(self.goal, dtype=np.float32)
        self.task_rewards = np.asarray(self.task_rewards, dtype=np.float32)
        if self.dones is None:
            self.dones = np.zeros(len(self.task_rewards), dtype=np.float32)
        self.dones = np.asarray(self.dones, dtype=np.float32)

    def __len__(self) -> int:
        return len(self.actions)

    def validate(self) -> None:
        n_obs, n_act, n_rew = len(self.observations), len(self.actions), len(self.task_rewards)
        if n_act < 1:
            raise TrajectoryValidationError("trajectory has no transitions")
        if not (n_obs == n_act + 1 == n_rew + 1) or len(self.dones) != n_rew:
            raise TrajectoryValidationError(
                f"inconsistent lengths: {n_obs} observations, {n_act} actions, "
                f"{n_rew} rewards, {len(self.dones)} done flags")
        if self.observations.ndim != 2 or self.actions.ndim != 2:
            raise TrajectoryValidationError("observations and actions must be 2-D arrays")
        if not np.isfinite(self.priority) or self.priority < 0:
            raise TrajectoryValidationError(f"priority must be finite and >= 0, got {self.priority}")


@dataclass
class SamplerConfig:
    alpha: float = 0.6
    beta: float = 0.4
    epsilon_priority: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.epsilon_priority < 0:
            raise ValueError("epsilon_priority must be non-negative")


@dataclass
class TransitionBatch:
    obs: np.ndarray
    actions: np.ndarray
    task_rewards: np.ndarray
    next_obs: np.ndarray
    goals: np.ndarray
    dones: np.ndarray
    trajectory_ids: np.ndarray
    steps: np.ndarray
    skills: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.task_rewards)


class ReplayBuffer:
    """FIFO store of whole trajectories, bounded by total transition count."""

    def __init__(self, capacity_transitions: int = 10 ** 6):
        if capacity_transitions < 1:
            raise ValueError("capacity must be at least one transition")
        self.capacity = int(capacity_transitions)
        self.trajectories: deque[TrajectoryRecord] = deque()
        self.n_transitions = 0
        self._next_id = 0
        self._by_id: dict[int, TrajectoryRecord] = {}

    def __len__(self) -> int:
        return len(self.trajectories)

    def ids(self) -> List[int]:
        return [t.id for t in self.trajectories]

    def get(self, trajectory_id: int) -> Optional[TrajectoryRecord]:
        return self._by_id.get(int(trajectory_id))

    def store(self, trajectory: TrajectoryRecord) -> "ReplayBuffer":
        trajectory.validate()
        if len(trajectory) > self.capacity:
            raise TrajectoryValidationError(
                f"trajectory of {len(trajectory)} transitions exceeds capacity {self.capacity}")
        trajectory.id = self._next_id
        self._next_id += 1
        self.trajectories.append(trajectory)
        self._by_id[trajectory.id] = trajectory
        self.n_transitions += len(trajectory)
        while self.n_transitions > self.capacity:
            old = self.trajectories.popleft()
            del self._by_id[old.id]
            self.n_transitions -= len(old)
        return self

    def max_priority(self, default: float = 1.0) -> float:
        if not self.trajectories:
            return default
        return max(t.priority for t in self.trajectories)

    # -- sampling ---------------------------------------------------------

    def _gather(self, traj_idx: np.ndarray, steps: np.ndarray, weights: np.ndarray) -> TransitionBatch:
        stored = list(self.trajectories)
        trajs = [stored[i] for i in traj_idx]
        obs_dim = self.trajectories[0].observations.shape[1] if self.trajectories else 0
        act_dim = self.trajectories[0].actions.shape[1] if self.trajectories else 0
        goal_dim = self.trajectories[0].goal.shape[0] if self.trajectories else 0
        if not trajs:
            empty = np.zeros((0,), dtype=np.float32)
            return TransitionBatch(np.zeros((0, obs_dim), np.float32), np.zeros((0, act_dim), np.float32),
                                   empty, np.zeros((0, obs_dim), np.float32),
                                   np.zeros((0, goal_dim), np.float32), empty,
                                   np.zeros(0, np.int64), np.zeros(0, np.int64),
                                   np.zeros(0, np.int64), empty)
        return TransitionBatch(
            obs=np.stack([t.observations[s] for t, s in zip(trajs, steps)]),
            actions=np.stack([t.actions[s] for t, s in zip(trajs, steps)]),
            task_rewards=np.array([t.task_rewards[s] for t, s in zip(trajs, steps)], np.float32),
            next_obs=np.stack([t.observations[s + 1] for t, s in zip(trajs, steps)]),
            goals=np.stack([t.goal for t in trajs]),
            dones=np.array([t.dones[s] for t, s in zip(trajs, steps)], np.float32),
            trajectory_ids=np.array([t.id for t in trajs], np.int64),
            steps=np.asarray(steps, np.int64),
            skills=np.array([t.skill for t in trajs], np.int64),
            weights=np.asarray(weights, np.float32),
        )

    def sample_uniform(self, n: int, rng: np.random.Generator) -> TransitionBatch:
        """``n`` transitions drawn uniformly over every stored transition."""
        if self.n_transitions == 0:
            raise BufferEmptyError("cannot sample from an empty replay buffer")
        lengths = np.array([len(t) for t in self.trajectories])
        flat = rng.integers(0, self.n_transitions, size=n)
        ends = np.cumsum(lengths)
        traj_idx = np.searchsorted(ends, flat, side="right")
        starts = ends - lengths
        steps = flat - starts[traj_idx]
        return self._gather(traj_idx, steps, np.ones(n, np.float32))

    def probabilities(self, cfg: SamplerConfig) -> np.ndarray:
        """Trajectory sampling distribution ``P(i)`` under ``cfg``."""
        pri = np.array([t.priority for t in self.trajectories], dtype=np.float64)
        if cfg.alpha == 0:
            scaled = np.ones_like(pri)
        else:
            scaled = (pri + cfg.epsilon_priority) ** cfg.alpha
        total = scaled.sum()
        if total <= 0:
            return np.full(len(pri), 1.0 / len(pri))
        return scaled / total

    def importance_weights(self, probs: np.ndarray, beta: float) -> np.ndarray:
        """``(N P(i)) ** -beta`` normalised by the largest weight in the buffer."""
        raw = (len(probs) * probs) ** (-beta)
        return raw / raw.max()

    def sample_prioritized(self, n: int, cfg: SamplerConfig,
                           rng: np.random.Generator) -> TransitionBatch:
        if self.n_transitions == 0:
            raise BufferEmptyError("cannot sample from an empty replay buffer")
        probs = self.probabilities(cfg)
        weights = self.importance_weights(probs, cfg.beta)
        traj_idx = rng.choice(len(probs), size=n, p=probs)
        lengths = np.array([len(t) for t in self.trajectories])
        steps = np.floor(rng.random(n) * lengths[traj_idx]).astype(np.int64)
        return self._gather(traj_idx, steps, weights[traj_idx])

    def update_priorities(self, trajectory_ids: Iterable[int],
                          values: Iterable[float]) -> "ReplayBuffer":
        for tid, value in zip(trajectory_ids, values):
            traj = self._by_id.get(int(tid))
            if traj is None:
                log.warning("priority update for unknown trajectory id %s ignored", tid)
                continue
            value = float(value)
            if not np.isfinite(value):
                log.warning("non-finite priority %r for trajectory %s set to 0", value, tid)
                value = 0.0
            elif value < 0:
                log.warning("negative priority %r for trajectory %s clamped to 0", value, tid)
                value = 0.0
            traj.priority = value
        return self

    def sample_trajectory(self, rng: np.random.Generator) -> TrajectoryRecord:
        if not self.trajectories:
            raise BufferEmptyError("cannot sample from an empty replay buffer")
        return self.trajectories[int(rng.integers(len(self.trajectories)))]


def snapshot(buffer: ReplayBuffer) -> Sequence[TrajectoryRecord]:
    """Consistent view of the stored trajectories for concurrent readers."""
    return tuple(buffer.trajectories)
