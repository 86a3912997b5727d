"""Goal-conditioned deterministic actor-critic with target networks.

The actor maps ``obs ++ cond`` to a tanh-bounded action, the critic maps
``obs ++ cond ++ action`` to a scalar Q value. ``cond`` is the goal, plus a
one-hot skill when the policy is skill-conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np

from . import nn_core
from .env import OBS_CLIP
from .errors import NonFiniteError
from .nn_core import AdamState, MlpSpec, ParamSet


@dataclass
class ExplorationConfig:
    random_action_prob: float = 0.3
    gaussian_noise_scale: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.random_action_prob <= 1.0:
            raise ValueError("random_action_prob must be in [0, 1]")
        if self.gaussian_noise_scale < 0:
            raise ValueError("gaussian_noise_scale must be non-negative")


@dataclass
class AgentParams:
    actor_spec: MlpSpec
    critic_spec: MlpSpec
    actor: ParamSet
    critic: ParamSet
    actor_target: ParamSet
    critic_target: ParamSet
    gamma: float = 0.98
    action_dim: int = 2

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")

    @property
    def input_dim(self) -> int:
        return self.actor_spec.input_size


@dataclass
class AgentOptimizers:
    actor: AdamState
    critic: AdamState


@dataclass
class UpdateSettings:
    action_l2: float = 1.0
    polyak: float = 0.95


def make_agent(obs_dim: int, cond_dim: int, action_dim: int, rng: np.random.Generator,
               hidden: Tuple[int, ...] = (64, 64, 64), gamma: float = 0.98) -> AgentParams:
    actor_spec = nn_core.mlp_spec(obs_dim + cond_dim, hidden, action_dim, "relu", "tanh")
    critic_spec = nn_core.mlp_spec(obs_dim + cond_dim + action_dim, hidden, 1, "relu", "linear")
    actor = nn_core.init_params(actor_spec, rng)
    critic = nn_core.init_params(critic_spec, rng)
    return AgentParams(actor_spec, critic_spec, actor, critic,
                       nn_core.copy_params(actor), nn_core.copy_params(critic), gamma, action_dim)


def make_optimizers(params: AgentParams, actor_lr: float = 1e-3,
                    critic_lr: float = 1e-3) -> AgentOptimizers:
    return AgentOptimizers(nn_core.adam_init(params.actor, actor_lr),
                           nn_core.adam_init(params.critic, critic_lr))


def policy_inputs(obs, cond) -> np.ndarray:
    obs = np.clip(np.atleast_2d(np.asarray(obs, dtype=np.float32)), -OBS_CLIP, OBS_CLIP)
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float32))
    return np.concatenate([obs, cond], axis=1)


def actor_output(params: AgentParams, obs, cond, target: bool = False) -> np.ndarray:
    weights = params.actor_target if target else params.actor
    return nn_core.mlp_forward(params.actor_spec, weights, policy_inputs(obs, cond))


def q_value(params: AgentParams, obs, cond, actions, target: bool = False) -> np.ndarray:
    weights = params.critic_target if target else params.critic
    x = np.concatenate([policy_inputs(obs, cond), np.atleast_2d(actions).astype(np.float32)], axis=1)
    return nn_core.mlp_forward(params.critic_spec, weights, x)[:, 0]


def act(params: AgentParams, observation, goal, explore: bool, cfg: ExplorationConfig,
        rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Action for one observation; ``goal`` is the full conditioning vector."""
    action = actor_output(params, observation, goal)[0].astype(np.float64)
    if not explore:
        return action
    if rng is None:
        raise ValueError("exploratory acting needs an rng")
    if rng.random() < cfg.random_action_prob:
        return rng.uniform(-1.0, 1.0, size=params.action_dim)
    noisy = action + cfg.gaussian_noise_scale * rng.standard_normal(params.action_dim)
    return np.clip(noisy, -1.0, 1.0)


def critic_target_value(params: AgentParams, next_obs, cond, rewards, dones) -> np.ndarray:
    """Clipped one-step bootstrap target ``r + gamma (1 - done) Q'(s', pi'(s'))``."""
    next_actions = actor_output(params, next_obs, cond, target=True)
    q_next = q_value(params, next_obs, cond, next_actions, target=True).astype(np.float64)
    r = np.asarray(rewards, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    y = r + params.gamma * (1.0 - d) * q_next
    bound = 1.0 / (1.0 - params.gamma)
    return np.clip(y, -bound, bound)


def critic_loss_and_grads(params: AgentParams, inputs, actions, targets, weights=None):
    """Weighted squared Bellman error and its gradient w.r.t. critic params."""
    x = np.concatenate([inputs, np.asarray(actions, dtype=inputs.dtype)], axis=1)
    dtype = params.critic["W0"].dtype
    q, cache = nn_core.mlp_forward(params.critic_spec, params.critic, x, keep=True)
    n = len(q)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    err = q[:, 0].astype(np.float64) - np.asarray(targets, dtype=np.float64)
    loss = float(np.mean(w * err * err))
    upstream = (2.0 * w * err / n).astype(dtype)[:, None]
    grads, _ = nn_core.mlp_backward(params.critic_spec, params.critic, cache, upstream)
    return loss, grads


def actor_loss_and_grads(params: AgentParams, inputs, action_l2: float = 1.0):
    """``-mean Q(s, pi(s)) + action_l2 * mean ||pi(s)||^2`` and its actor gradient."""
    pi, a_cache = nn_core.mlp_forward(params.actor_spec, params.actor, inputs, keep=True)
    x = np.concatenate([inputs, pi], axis=1)
    q, c_cache = nn_core.mlp_forward(params.critic_spec, params.critic, x, keep=True)
    n = len(q)
    loss = float(-np.mean(q) + action_l2 * np.mean(np.sum(pi * pi, axis=1)))
    dtype = params.actor["W0"].dtype
    _, dx = nn_core.mlp_backward(params.critic_spec, params.critic, c_cache,
                                 np.full((n, 1), -1.0 / n, dtype=dtype))
    d_pi = dx[:, inputs.shape[1]:] + (2.0 * action_l2 / n) * pi
    grads, _ = nn_core.mlp_backward(params.actor_spec, params.actor, a_cache, d_pi)
    return loss, grads


def update(params: AgentParams, obs, cond, actions, rewards, next_obs, dones,
           optimizers: AgentOptimizers, weights=None,
           settings: UpdateSettings = UpdateSettings()):
    """One critic step, one actor step, then Polyak-average both targets.

    Both gradients are taken at the pre-update parameters. Returns
    ``(params, optimizers, losses)``; raises before touching anything if a
    loss is not finite.
    """
    inputs = policy_inputs(obs, cond)
    y = critic_target_value(params, next_obs, cond, rewards, dones)
    critic_loss, c_grads = critic_loss_and_grads(params, inputs, actions, y, weights)
    actor_loss, a_grads = actor_loss_and_grads(params, inputs, settings.action_l2)
    if not (np.isfinite(critic_loss) and np.isfinite(actor_loss)):
        raise NonFiniteError(
            f"non-finite loss (critic={critic_loss}, actor={actor_loss}); "
            f"reward range [{np.min(rewards)}, {np.max(rewards)}], "
            f"target range [{np.min(y)}, {np.max(y)}]")
    critic, c_opt = nn_core.adam_step(params.critic, c_grads, optimizers.critic)
    actor, a_opt = nn_core.adam_step(params.actor, a_grads, optimizers.actor)
    new = replace(
        params, actor=actor, critic=critic,
        actor_target=nn_core.polyak_update(params.actor_target, actor, settings.polyak),
        critic_target=nn_core.polyak_update(params.critic_target, critic, settings.polyak),
    )
    td = y - q_value(params, obs, cond, actions).astype(np.float64)
    losses = {"critic": critic_loss, "actor": actor_loss, "abs_td": np.abs(td)}
    return new, AgentOptimizers(a_opt, c_opt), losses


def to_arrays(params: AgentParams) -> Dict[str, np.ndarray]:
    arrays = {}
    for name in ("actor", "critic", "actor_target", "critic_target"):
        arrays.update(nn_core.prefixed(name, getattr(params, name)))
    arrays["agent.meta/actor_sizes"] = np.array(params.actor_spec.layer_sizes, np.float32)
    arrays["agent.meta/critic_sizes"] = np.array(params.critic_spec.layer_sizes, np.float32)
    arrays["agent.meta/gamma"] = np.array([params.gamma], np.float32)
    return arrays


def from_arrays(arrays) -> AgentParams:
    a_sizes = tuple(int(round(x)) for x in arrays["agent.meta/actor_sizes"])
    c_sizes = tuple(int(round(x)) for x in arrays["agent.meta/critic_sizes"])
    actor_spec = MlpSpec(a_sizes, "relu", "tanh")
    critic_spec = MlpSpec(c_sizes, "relu", "linear")
    parts = {name: nn_core.unprefixed(name, arrays)
             for name in ("actor", "critic", "actor_target", "critic_target")}
    nn_core.check_params(actor_spec, parts["actor"])
    nn_core.check_params(actor_spec, parts["actor_target"])
    nn_core.check_params(critic_spec, parts["critic"])
    nn_core.check_params(critic_spec, parts["critic_target"])
    gamma = float(np.float32(arrays["agent.meta/gamma"][0]))
    return AgentParams(actor_spec, critic_spec, parts["actor"], parts["critic"],
                       parts["actor_target"], parts["critic_target"], gamma, a_sizes[-1])
