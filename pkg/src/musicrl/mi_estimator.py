"""Neural mutual-information estimation between surrounding and agent state.

A scalar statistics network ``T(s_s, s_a)`` is trained to maximise the
Donsker-Varadhan lower bound

    I(S_s; S_a) >= E_joint[T] - log E_marginal[exp(T)]

Training uses every state of one trajectory at once: the joint samples are
the in-order ``(s_s_t, s_a_t)`` pairs and the marginal samples re-pair each
``s_s_t`` with agent states shuffled along time. Rewards are evaluated on a
single adjacent pair ``{s_t, s_t+1}``, whose marginal samples are the two
cross pairings, and are then scaled and clipped.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from . import nn_core
from .env import StateSplit, split_observation
from .errors import DimensionError, NonFiniteError
from .nn_core import AdamState, MlpSpec, ParamSet


class PreconditionError(ValueError):
    pass


@dataclass
class MiConfig:
    reward_scale: float = 5000.0
    clip_low: float = 0.0
    clip_high: float = 1.0
    estimator_lr: float = 1e-3

    def __post_init__(self):
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        if not self.clip_low < self.clip_high:
            raise ValueError("clip_low must be below clip_high")
        if self.estimator_lr <= 0:
            raise ValueError("estimator_lr must be positive")


@dataclass
class StatisticsNetwork:
    """Parameters of ``T``; input is ``surrounding ++ agent`` (or action)."""

    spec: MlpSpec
    params: ParamSet
    ema_denominator: float = 1.0
    ema_decay: float = 0.99
    surrounding_dim: int = 0

    def __post_init__(self):
        if self.spec.output_size != 1:
            raise ValueError("statistics network must have a scalar output")
        if not self.ema_denominator > 0:
            raise ValueError("ema_denominator must stay positive")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in (0, 1)")
        if not 0 < self.surrounding_dim < self.spec.input_size:
            raise ValueError("surrounding_dim must leave room for the agent-side input")

    @property
    def other_dim(self) -> int:
        return self.spec.input_size - self.surrounding_dim


@dataclass
class MiEstimate:
    value_nats: float
    n_joint_samples: int
    n_marginal_samples: int


def make_statistics_network(surrounding_dim: int, other_dim: int, rng: np.random.Generator,
                            hidden: Tuple[int, ...] = (64, 64),
                            ema_decay: float = 0.99) -> StatisticsNetwork:
    spec = nn_core.mlp_spec(surrounding_dim + other_dim, tuple(hidden), 1)
    return StatisticsNetwork(spec, nn_core.init_params(spec, rng), 1.0, ema_decay, surrounding_dim)


def statistics(phi: StatisticsNetwork, surrounding, other) -> np.ndarray:
    """Evaluate ``T`` row-wise; returns shape ``(n,)``."""
    s = np.atleast_2d(np.asarray(surrounding, dtype=np.float32))
    o = np.atleast_2d(np.asarray(other, dtype=np.float32))
    if s.shape[1] != phi.surrounding_dim or o.shape[1] != phi.other_dim or len(s) != len(o):
        raise DimensionError(
            f"statistics network expects ({phi.surrounding_dim}, {phi.other_dim}) inputs, "
            f"got {s.shape} and {o.shape}")
    return nn_core.mlp_forward(phi.spec, phi.params, np.concatenate([s, o], axis=1))[:, 0]


def dv_bound(t_joint, t_marginal) -> MiEstimate:
    """Empirical Donsker-Varadhan bound ``mean(Tj) - log(mean(exp(Tm)))``."""
    tj = np.asarray(t_joint, dtype=np.float64).reshape(-1)
    tm = np.asarray(t_marginal, dtype=np.float64).reshape(-1)
    if tj.size == 0 or tm.size == 0:
        raise ValueError("dv_bound needs at least one joint and one marginal sample")
    if not (np.all(np.isfinite(tj)) and np.all(np.isfinite(tm))):
        raise NonFiniteError("statistics network produced non-finite values")
    value = float(tj.mean() - (logsumexp(tm) - np.log(tm.size)))
    return MiEstimate(value, int(tj.size), int(tm.size))


def marginal_shuffle(agent_states, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random permutation along the first (time) axis."""
    states = np.asarray(agent_states)
    if len(states) < 1:
        raise ValueError("need at least one state to shuffle")
    return states[rng.permutation(len(states))]


def analytic_gaussian_mi(rho: float, dims: int = 1) -> float:
    """MI in nats of ``dims`` independent pairs of unit Gaussians with correlation ``rho``."""
    if not abs(rho) < 1:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    if dims < 1:
        raise ValueError("dims must be a positive integer")
    return float(-0.5 * dims * np.log1p(-rho * rho)) + 0.0


# ---------------------------------------------------------------------------
# Training


def estimator_objective(phi: StatisticsNetwork, surrounding, other, shuffled_other):
    """Bound value plus the bias-corrected gradient (of the negated bound).

    The log-denominator gradient ``grad E[e^T] / E[e^T]`` uses the running
    average of ``E[e^T]`` in the denominator. Returns
    ``(estimate, grads, new_ema)``; the estimate is the plain minibatch bound.
    """
    n = len(surrounding)
    inputs = np.concatenate([
        np.concatenate([surrounding, other], axis=1),
        np.concatenate([surrounding, shuffled_other], axis=1),
    ]).astype(phi.params["W0"].dtype, copy=False)
    out, cache = nn_core.mlp_forward(phi.spec, phi.params, inputs, keep=True)
    t = out[:, 0].astype(np.float64)
    t_joint, t_marg = t[:n], t[n:]
    estimate = dv_bound(t_joint, t_marg)

    # shift by max so exp() cannot overflow; ema is tracked unshifted in log space
    shift = float(t_marg.max())
    e_marg = np.exp(t_marg - shift)
    log_batch_mean = shift + np.log(e_marg.mean())
    new_ema = phi.ema_decay * phi.ema_denominator + (1 - phi.ema_decay) * np.exp(log_batch_mean)
    new_ema = float(max(new_ema, np.finfo(np.float64).tiny))

    upstream = np.empty((2 * n, 1))
    upstream[:n, 0] = -1.0 / n
    upstream[n:, 0] = np.exp(t_marg - np.log(new_ema)) / n
    grads, _ = nn_core.mlp_backward(phi.spec, phi.params, cache, upstream)
    return estimate, grads, new_ema


def train_on_pairs(phi: StatisticsNetwork, surrounding, other, optimizer: AdamState,
                   rng: np.random.Generator):
    """One ascent step on the bound for an in-order sample set.

    ``other`` is the agent state (or the action, for the empowerment
    estimator). Marginal samples come from shuffling ``other`` in time.
    Returns ``(phi, optimizer, pre_update_bound)``.
    """
    s = np.asarray(surrounding, dtype=np.float32)
    o = np.asarray(other, dtype=np.float32)
    if len(s) != len(o):
        raise DimensionError("surrounding and agent sequences differ in length")
    if s.shape[1] != phi.surrounding_dim or o.shape[1] != phi.other_dim:
        raise DimensionError(
            f"estimator expects ({phi.surrounding_dim}, {phi.other_dim}) inputs, "
            f"got {s.shape[1]} and {o.shape[1]}")
    shuffled = marginal_shuffle(o, rng)
    estimate, grads, new_ema = estimator_objective(phi, s, o, shuffled)
    params, optimizer = nn_core.adam_step(phi.params, grads, optimizer)
    return replace(phi, params=params, ema_denominator=new_ema), optimizer, estimate.value_nats


def train_estimator_step(phi: StatisticsNetwork, trajectory, split: StateSplit,
                         optimizer: AdamState, rng: np.random.Generator):
    """Train on every state of ``trajectory``; returns ``(phi, optimizer, bound)``."""
    obs = np.asarray(trajectory.observations)
    if len(obs) < 3:
        raise PreconditionError("estimator training needs a trajectory of at least 2 transitions")
    agent, surrounding = split_observation(obs, split)
    return train_on_pairs(phi, surrounding, agent, optimizer, rng)


def make_estimator_optimizer(phi: StatisticsNetwork, cfg: MiConfig) -> AdamState:
    return nn_core.adam_init(phi.params, cfg.estimator_lr)


# ---------------------------------------------------------------------------
# Evaluation


def trajectory_bound(phi: StatisticsNetwork, surrounding, other,
                     rng: np.random.Generator) -> float:
    """Trajectory-level bound with a time-shuffled marginal, no update."""
    o = np.asarray(other)
    t_joint = statistics(phi, surrounding, o)
    t_marg = statistics(phi, surrounding, marginal_shuffle(o, rng))
    return dv_bound(t_joint, t_marg).value_nats


def trajectory_bound_from_obs(phi: StatisticsNetwork, observations, split: StateSplit,
                              rng: np.random.Generator) -> float:
    agent, surrounding = split_observation(np.asarray(observations), split)
    return trajectory_bound(phi, surrounding, agent, rng)


def pair_bound(phi: StatisticsNetwork, surr_t, other_t, surr_t1, other_t1) -> np.ndarray:
    """Unscaled two-sample bound for a batch of adjacent pairs.

    Joint samples are ``(s_t, o_t)`` and ``(s_t1, o_t1)``; the marginal
    samples are the cross pairings ``(s_t, o_t1)`` and ``(s_t1, o_t)``.
    """
    s0, o0 = np.atleast_2d(surr_t), np.atleast_2d(other_t)
    s1, o1 = np.atleast_2d(surr_t1), np.atleast_2d(other_t1)
    n = len(s0)
    t = statistics(phi, np.concatenate([s0, s1, s0, s1]), np.concatenate([o0, o1, o1, o0]))
    t = t.astype(np.float64).reshape(4, n)
    if not np.all(np.isfinite(t)):
        raise NonFiniteError("statistics network produced non-finite values")
    joint = 0.5 * (t[0] + t[1])
    marginal = np.logaddexp(t[2], t[3]) - np.log(2.0)
    return joint - marginal


def scale_and_clip(raw, cfg: MiConfig):
    scaled = cfg.reward_scale * np.asarray(raw, dtype=np.float64)
    return scaled, np.clip(scaled, cfg.clip_low, cfg.clip_high)


def transition_rewards(phi: StatisticsNetwork, obs_t, obs_t1, split: StateSplit,
                       cfg: MiConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Batched pair rewards; returns ``(scaled_pre_clip, clipped)``."""
    obs_t, obs_t1 = np.atleast_2d(obs_t), np.atleast_2d(obs_t1)
    if obs_t.shape != obs_t1.shape:
        raise DimensionError(f"state shapes differ: {obs_t.shape} vs {obs_t1.shape}")
    a0, s0 = split_observation(obs_t, split)
    a1, s1 = split_observation(obs_t1, split)
    return scale_and_clip(pair_bound(phi, s0, a0, s1, a1), cfg)


def transition_reward(phi: StatisticsNetwork, s_t, s_t1, split: StateSplit,
                      cfg: MiConfig) -> float:
    """Scaled and clipped MI reward of the single fraction ``{s_t, s_t1}``."""
    s_t, s_t1 = np.asarray(s_t), np.asarray(s_t1)
    if s_t.ndim != 1 or s_t.shape != s_t1.shape:
        raise DimensionError("transition_reward takes two state vectors of equal length")
    _, clipped = transition_rewards(phi, s_t, s_t1, split, cfg)
    return float(clipped[0])


def mean_pair_bound(phi: StatisticsNetwork, surrounding, other) -> float:
    """Average unscaled pair bound over all adjacent pairs of a sequence."""
    s, o = np.asarray(surrounding), np.asarray(other)
    return float(np.mean(pair_bound(phi, s[:-1], o[:-1], s[1:], o[1:])))


# ---------------------------------------------------------------------------
# Persistence


def to_arrays(phi: StatisticsNetwork, prefix: str = "estimator") -> Dict[str, np.ndarray]:
    arrays = nn_core.prefixed(prefix, phi.params)
    arrays[f"{prefix}.meta/layer_sizes"] = np.array(phi.spec.layer_sizes, dtype=np.float32)
    arrays[f"{prefix}.meta/surrounding_dim"] = np.array([phi.surrounding_dim], dtype=np.float32)
    arrays[f"{prefix}.meta/ema"] = np.array([phi.ema_denominator], dtype=np.float32)
    arrays[f"{prefix}.meta/ema_decay"] = np.array([phi.ema_decay], dtype=np.float32)
    return arrays


def from_arrays(arrays, prefix: str = "estimator") -> StatisticsNetwork:
    key = f"{prefix}.meta/layer_sizes"
    if key not in arrays:
        raise KeyError(f"no {prefix!r} statistics network in checkpoint")
    sizes = tuple(int(round(x)) for x in arrays[key])
    spec = MlpSpec(sizes)
    params = nn_core.unprefixed(prefix, arrays)
    nn_core.check_params(spec, params)
    ema = float(arrays[f"{prefix}.meta/ema"][0])
    decay = float(np.float32(arrays[f"{prefix}.meta/ema_decay"][0]))
    return StatisticsNetwork(spec, params, max(ema, 1e-30), min(max(decay, 1e-6), 1 - 1e-6),
                             int(round(float(arrays[f"{prefix}.meta/surrounding_dim"][0]))))
