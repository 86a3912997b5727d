"""Reward composition and the auxiliary intrinsic signals.

* ``compose_reward`` mixes task, MI and auxiliary rewards per training mode.
* ``empowerment_reward`` is the pair bound with actions in the agent slot,
  i.e. an estimate of I(A; S_s).
* The DIAYN-style discriminator predicts the skill index from the
  surrounding state and rewards ``log q(z | s_s) - log p(z)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from scipy.special import log_softmax, logsumexp

from . import nn_core
from .errors import DimensionError
from .mi_estimator import MiConfig, StatisticsNetwork, pair_bound, scale_and_clip
from .nn_core import AdamState, MlpSpec, ParamSet


class RewardMode(str, enum.Enum):
    TASK_ONLY = "task_only"
    MUSIC_U = "music_u"
    MUSIC_R = "music_r"
    EMPOWERMENT = "empowerment"
    DIAYN = "diayn"
    MUSIC_PLUS_DIAYN = "music_plus_diayn"

    @property
    def uses_task_reward(self) -> bool:
        return self in (RewardMode.TASK_ONLY, RewardMode.MUSIC_R)

    @property
    def uses_mi_reward(self) -> bool:
        return self in (RewardMode.MUSIC_U, RewardMode.MUSIC_R, RewardMode.MUSIC_PLUS_DIAYN)


def compose_reward(mode: RewardMode, task_r, mi_r, aux_r=0.0):
    """Per-transition reward fed to the critic. Works element-wise on arrays."""
    mode = RewardMode(mode)
    if mode is RewardMode.TASK_ONLY:
        return task_r
    if mode is RewardMode.MUSIC_U:
        return mi_r
    if mode is RewardMode.MUSIC_R:
        return task_r + mi_r
    if mode in (RewardMode.EMPOWERMENT, RewardMode.DIAYN):
        return aux_r
    return mi_r + aux_r


def empowerment_reward(phi_emp: StatisticsNetwork, actions, surrounding, cfg: MiConfig):
    """Scaled, clipped pair bound between two actions and the surrounding states
    paired with them.

    ``actions`` and ``surrounding`` hold the two members of the fraction,
    ``(a_i, a_j)`` and ``(s_i, s_j)``; batches of pairs are accepted with
    shape ``(2, n, dim)``. Returns a float for a single pair.
    """
    a = np.asarray(actions, dtype=np.float32)
    s = np.asarray(surrounding, dtype=np.float32)
    single = a.ndim == 2
    if single:
        a, s = a[:, None, :], s[:, None, :]
    if a.shape[0] != 2 or s.shape[0] != 2 or a.shape[1] != s.shape[1]:
        raise DimensionError("empowerment_reward takes two (action, surrounding) pairs")
    raw = pair_bound(phi_emp, s[0], a[0], s[1], a[1])
    _, clipped = scale_and_clip(raw, cfg)
    return float(clipped[0]) if single else clipped


# ---------------------------------------------------------------------------
# Skill discriminator


@dataclass
class DiscriminatorParams:
    spec: MlpSpec
    params: ParamSet
    num_skills: int = 5

    def __post_init__(self):
        if self.num_skills < 2:
            raise ValueError("need at least two skills")
        if self.spec.output_size != self.num_skills:
            raise ValueError("discriminator output size must equal the number of skills")


def make_discriminator(surrounding_dim: int, num_skills: int, rng: np.random.Generator,
                       hidden: Tuple[int, ...] = (64, 64)) -> DiscriminatorParams:
    spec = nn_core.mlp_spec(surrounding_dim, hidden, num_skills)
    return DiscriminatorParams(spec, nn_core.init_params(spec, rng), num_skills)


def skill_logits(psi: DiscriminatorParams, surrounding) -> np.ndarray:
    return nn_core.mlp_forward(psi.spec, psi.params, np.atleast_2d(surrounding))


def one_hot(z, num_skills: int) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=np.int64))
    out = np.zeros((len(z), num_skills), dtype=np.float32)
    out[np.arange(len(z)), z] = 1.0
    return out


def _check_skills(z, k: int) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z))
    if not np.issubdtype(z.dtype, np.integer):
        raise TypeError("skill indices must be integers")
    if np.any(z < 0) or np.any(z >= k):
        raise IndexError(f"skill index out of range [0, {k})")
    return z.astype(np.int64)


def diayn_reward(psi: DiscriminatorParams, surrounding, z):
    """``log softmax(psi(s_s))[z] + log K``; scalar in, scalar out."""
    single = np.ndim(z) == 0
    zz = _check_skills(z, psi.num_skills)
    logits = skill_logits(psi, surrounding).astype(np.float64)
    if len(logits) != len(zz):
        raise DimensionError("one skill index per surrounding state expected")
    r = log_softmax(logits, axis=1)[np.arange(len(zz)), zz] + np.log(psi.num_skills)
    return float(r[0]) if single else r


def discriminator_loss_and_grads(psi: DiscriminatorParams, surrounding, z):
    zz = _check_skills(z, psi.num_skills)
    x = np.atleast_2d(np.asarray(surrounding, dtype=psi.params["W0"].dtype))
    if len(x) == 0:
        raise ValueError("empty discriminator batch")
    logits, cache = nn_core.mlp_forward(psi.spec, psi.params, x, keep=True)
    lg = logits.astype(np.float64)
    logp = lg - logsumexp(lg, axis=1, keepdims=True)
    n = len(zz)
    loss = float(-np.mean(logp[np.arange(n), zz]))
    upstream = np.exp(logp)
    upstream[np.arange(n), zz] -= 1.0
    upstream /= n
    grads, _ = nn_core.mlp_backward(psi.spec, psi.params, cache, upstream)
    return max(loss, 0.0), grads


def train_discriminator_step(psi: DiscriminatorParams, surrounding, z, optimizer: AdamState):
    """One Adam step on skill cross-entropy; returns ``(psi, optimizer, loss)``."""
    loss, grads = discriminator_loss_and_grads(psi, surrounding, z)
    params, optimizer = nn_core.adam_step(psi.params, grads, optimizer)
    return replace(psi, params=params), optimizer, loss


def discriminator_to_arrays(psi: DiscriminatorParams, prefix: str = "discriminator"):
    arrays = nn_core.prefixed(prefix, psi.params)
    arrays[f"{prefix}.meta/layer_sizes"] = np.array(psi.spec.layer_sizes, np.float32)
    return arrays


def discriminator_from_arrays(arrays, prefix: str = "discriminator") -> DiscriminatorParams:
    sizes = tuple(int(round(x)) for x in arrays[f"{prefix}.meta/layer_sizes"])
    spec = MlpSpec(sizes)
    params = nn_core.unprefixed(prefix, arrays)
    nn_core.check_params(spec, params)
    return DiscriminatorParams(spec, params, sizes[-1])
