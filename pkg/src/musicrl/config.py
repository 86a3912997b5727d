"""Run configuration and the line-based ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Tuple

from .agent import ExplorationConfig, UpdateSettings
from .env import ENV_NAMES, StateSplit
from .errors import ConfigError
from .intrinsic import RewardMode
from .mi_estimator import MiConfig
from .replay import SamplerConfig

VARIANTS = ("task", "music-u", "music-r", "music-f", "music-p", "music-t",
            "empowerment", "diayn", "music-diayn")

_VARIANT_MODES = {
    "task": RewardMode.TASK_ONLY,
    "music-u": RewardMode.MUSIC_U,
    "music-r": RewardMode.MUSIC_R,
    "music-f": RewardMode.TASK_ONLY,
    "music-p": RewardMode.TASK_ONLY,
    "music-t": RewardMode.MUSIC_R,
    "empowerment": RewardMode.EMPOWERMENT,
    "diayn": RewardMode.DIAYN,
    "music-diayn": RewardMode.MUSIC_PLUS_DIAYN,
}


@dataclass
class RunConfig:
    """Everything needed to reproduce one training run.

    Defaults are the desk-scale profile; ``RunConfig.full()`` restores the
    large-scale hyperparameters (256-wide networks, 50 cycles, batch 256,
    32 rollouts per cycle, 10^6 buffer, reward scale 5000). The desk reward
    scale is doubled because the small estimator's early bounds are tiny.
    """

    env_name: str = "point-push"
    variant: str = "task"
    seed: int = 0
    profile: str = "desk"
    out_dir: str = "runs/default"
    policy_ckpt: str = ""
    estimator_ckpt: str = ""

    # schedule
    epochs: int = 20
    cycles_per_epoch: int = 10
    rollouts_per_cycle: int = 4
    batches_per_cycle: int = 40
    batch_size: int = 128
    test_rollouts_per_epoch: int = 10
    episode_length: int = 50
    buffer_size: int = 50_000
    num_workers: int = 1

    # networks and agent
    hidden_units: int = 64
    hidden_layers: int = 3
    gamma: float = 0.98
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    polyak: float = 0.95
    action_l2: float = 1.0
    terminal_on_success: bool = False
    random_action_prob: float = 0.3
    gaussian_noise_scale: float = 0.2

    # MI estimator and reward
    agent_state: str = "agent_pos"
    surrounding_state: str = "object_pos"
    estimator_hidden_units: int = 64
    estimator_hidden_layers: int = 2
    estimator_lr: float = 1e-3
    ema_decay: float = 0.99
    reward_scale: float = 10000.0
    clip_low: float = 0.0
    clip_high: float = 1.0

    # prioritised replay
    alpha: float = 0.6
    beta: float = 0.4
    epsilon_priority: float = 1e-6
    priority_source: str = "mi"
    priority_refresh: str = "on_sample"

    # skills
    num_skills: int = 5
    diayn_staged: bool = True
    pretrain_fraction: float = 0.5
    discriminator_lr: float = 1e-3

    record_timing: bool = True

    def __post_init__(self):
        self.validate()

    @classmethod
    def full(cls, **overrides) -> "RunConfig":
        values = dict(profile="full", cycles_per_epoch=50, batch_size=256,
                      rollouts_per_cycle=32, buffer_size=10 ** 6, hidden_units=256, hidden_layers=3,
                      estimator_hidden_units=256, estimator_hidden_layers=3,
                      reward_scale=5000.0)
        values.update(overrides)
        return cls(**values)

    def validate(self) -> None:
        if self.env_name not in ENV_NAMES:
            raise ConfigError(f"env_name must be one of {ENV_NAMES}, got {self.env_name!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.profile not in ("desk", "full"):
            raise ConfigError(f"profile must be 'desk' or 'full', got {self.profile!r}")
        for name in ("epochs",):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("cycles_per_epoch", "rollouts_per_cycle", "batches_per_cycle", "batch_size",
                     "episode_length", "buffer_size", "hidden_units", "hidden_layers",
                     "estimator_hidden_units", "estimator_hidden_layers", "num_workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.test_rollouts_per_epoch < 1:
            raise ConfigError("test_rollouts_per_epoch must be >= 1")
        if self.episode_length < 2:
            raise ConfigError("episode_length must be >= 2 for estimator training")
        if self.priority_source not in ("mi", "td"):
            raise ConfigError("priority_source must be 'mi' or 'td'")
        if self.priority_refresh not in ("on_sample", "per_epoch"):
            raise ConfigError("priority_refresh must be 'on_sample' or 'per_epoch'")
        if not 0.0 <= self.pretrain_fraction <= 1.0:
            raise ConfigError("pretrain_fraction must be in [0, 1]")
        try:
            self.split()
            self.mi_config()
            self.sampler_config()
            self.exploration_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not 0.0 <= self.polyak <= 1.0:
            raise ConfigError("polyak must be in [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must be in [0, 1)")
        if self.num_skills < 2:
            raise ConfigError("num_skills must be >= 2")

    def check_required_checkpoints(self) -> None:
        if self.variant == "music-f" and not self.policy_ckpt:
            raise ConfigError("music-f needs policy_ckpt (a pretrained music-u checkpoint)")
        if self.variant == "music-t" and not self.estimator_ckpt:
            raise ConfigError("music-t needs estimator_ckpt (a trained estimator checkpoint)")
        for path in (self.policy_ckpt, self.estimator_ckpt):
            if path and not Path(path).is_file():
                raise ConfigError(f"checkpoint not found: {path}")

    # -- derived views ---------------------------------------------------

    @property
    def reward_mode(self) -> RewardMode:
        if self.variant == "music-diayn" and self.diayn_staged:
            return RewardMode.DIAYN
        return _VARIANT_MODES[self.variant]

    def mode_for_epoch(self, epoch: int) -> RewardMode:
        """Staged MUSIC+DIAYN pretrains with MI reward, then switches to DIAYN."""
        if self.variant == "music-diayn" and self.diayn_staged:
            n_pre = int(round(self.pretrain_fraction * self.epochs))
            return RewardMode.MUSIC_U if epoch < n_pre else RewardMode.DIAYN
        return _VARIANT_MODES[self.variant]

    @property
    def prioritized(self) -> bool:
        return self.variant == "music-p"

    @property
    def skill_conditioned(self) -> bool:
        return self.variant in ("diayn", "music-diayn")

    @property
    def zero_goal(self) -> bool:
        """Task-free variants hide the goal but keep its input slots."""
        return self.variant in ("music-u", "empowerment", "diayn", "music-diayn")

    @property
    def frozen_estimator(self) -> bool:
        return self.variant == "music-t"

    def split(self) -> StateSplit:
        return StateSplit.from_names(_names(self.agent_state), _names(self.surrounding_state))

    def mi_config(self) -> MiConfig:
        return MiConfig(self.reward_scale, self.clip_low, self.clip_high, self.estimator_lr)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.alpha, self.beta, self.epsilon_priority)

    def exploration_config(self) -> ExplorationConfig:
        return ExplorationConfig(self.random_action_prob, self.gaussian_noise_scale)

    def update_settings(self) -> UpdateSettings:
        return UpdateSettings(self.action_l2, self.polyak)

    def actor_hidden(self) -> Tuple[int, ...]:
        return (self.hidden_units,) * self.hidden_layers

    def estimator_hidden(self) -> Tuple[int, ...]:
        return (self.estimator_hidden_units,) * self.estimator_hidden_layers

    def steps_per_epoch(self) -> int:
        return self.cycles_per_epoch * self.rollouts_per_cycle * self.episode_length

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _names(text: str):
    return [part.strip() for part in text.split(",") if part.strip()]


def _convert(raw: str, typ, key: str):
    if typ in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    return raw


def parse_config_text(text: str) -> Dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys raise."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(raw, types[key], key)
    return values


def load_config(path=None, **overrides) -> RunConfig:
    """Config file values, then ``overrides``, on top of the chosen profile."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    profile = values.pop("profile", "desk")
    if profile == "full":
        return RunConfig.full(**values)
    return RunConfig(profile=profile, **values)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
