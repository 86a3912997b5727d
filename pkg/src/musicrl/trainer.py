"""Training loop, evaluation and reporting.

``run_training`` interleaves rollout collection with off-policy updates:

    for each epoch:
        for each cycle:
            collect exploratory rollouts and store them
            for each batch:
                sample transitions, score them with the current estimator,
                compose rewards for the variant, update actor and critic,
                train the estimator on one stored trajectory
        evaluate the deterministic policy, write metrics and a checkpoint

Intrinsic rewards are computed when a batch is sampled, never stored, so
they follow the estimator as it improves.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import agent as agent_mod
from . import env
from . import intrinsic
from . import mi_estimator as mi
from . import nn_core
from .config import RunConfig
from .errors import CompatibilityError, NonFiniteError
from .intrinsic import RewardMode
from .replay import ReplayBuffer, TrajectoryRecord

log = logging.getLogger(__name__)


@dataclass
class MetricsRow:
    epoch: int
    success_rate: float
    task_return: float
    intrinsic_pre_clip: float
    intrinsic_post_clip: float
    estimator_bound: float
    object_displacement: float
    wall_clock_seconds: float


METRICS_COLUMNS = [f.name for f in fields(MetricsRow)]


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainingResult:
    rows: List[MetricsRow]
    out_dir: Path
    final_checkpoint: Path
    prior_checkpoint: Path
    env_steps_per_epoch: List[int]
    intrinsic_range: Tuple[float, float]


# ---------------------------------------------------------------------------
# File formats


def emit_metrics(rows: Sequence[MetricsRow], path) -> Path:
    """Header plus one comma-separated row per epoch, floats at full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([repr(getattr(row, c)) for c in METRICS_COLUMNS])
    return path


def read_metrics(path) -> List[MetricsRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METRICS_COLUMNS:
            raise ValueError(f"unexpected metrics header {header}")
        return [MetricsRow(int(r[0]), *(float(x) for x in r[1:])) for r in reader]


def save_trajectories(trajectories: Sequence[TrajectoryRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for t in trajectories:
            fh.write(json.dumps({
                "observations": t.observations.tolist(),
                "actions": t.actions.tolist(),
                "goal": t.goal.tolist(),
                "task_rewards": t.task_rewards.tolist(),
                "dones": t.dones.tolist(),
                "skill": int(t.skill),
            }) + "\n")
    return path


def load_trajectories(path) -> List[TrajectoryRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / "test_trajectories.jsonl"
    out = []
    with path.open() as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                t = TrajectoryRecord(d["observations"], d["actions"], d["goal"], d["task_rewards"],
                                     d.get("dones"), d.get("skill", -1))
                t.validate()
                out.append(t)
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Checkpoint helpers


def policy_meta(cond_dim: int, skill_dim: int, zero_goal: bool, split: env.StateSplit):
    return {
        "meta/obs_dim": np.array([env.OBS_DIM], np.float32),
        "meta/cond_dim": np.array([cond_dim], np.float32),
        "meta/skill_dim": np.array([skill_dim], np.float32),
        "meta/zero_goal": np.array([1.0 if zero_goal else 0.0], np.float32),
        "meta/split_agent": np.array(split.agent_indices, np.float32),
        "meta/split_surrounding": np.array(split.surrounding_indices, np.float32),
    }


def save_policy_checkpoint(params: agent_mod.AgentParams, path, skill_dim: int = 0,
                           zero_goal: bool = False, split: env.StateSplit = env.DEFAULT_SPLIT):
    cond_dim = params.input_dim - env.OBS_DIM
    arrays = agent_mod.to_arrays(params)
    arrays.update(policy_meta(cond_dim, skill_dim, zero_goal, split))
    return nn_core.save_checkpoint(arrays, path)


def _meta_int(arrays, key: str, default: int = 0) -> int:
    return int(round(float(arrays[key][0]))) if key in arrays else default


def load_estimator(source, prefix: str = "estimator") -> mi.StatisticsNetwork:
    if isinstance(source, mi.StatisticsNetwork):
        return source
    return mi.from_arrays(nn_core.load_checkpoint(source), prefix)


# ---------------------------------------------------------------------------
# Training


class Trainer:
    """Mutable training state for one run; see :func:`run_training`."""

    def __init__(self, cfg: RunConfig):
        cfg.check_required_checkpoints()
        self.cfg = cfg
        streams = np.random.SeedSequence(cfg.seed).spawn(5)
        (self.rng_init, self.rng_rollout, self.rng_sample,
         self.rng_estimator, self.rng_eval) = (np.random.default_rng(s) for s in streams)
        self.split = cfg.split()
        self.mi_cfg = cfg.mi_config()
        self.sampler = cfg.sampler_config()
        self.exploration = cfg.exploration_config()
        self.settings = cfg.update_settings()
        self.skill_dim = cfg.num_skills if cfg.skill_conditioned else 0
        self.cond_dim = env.GOAL_DIM + self.skill_dim
        self.lineage: Dict[str, Dict[str, str]] = {}
        self.out_dir = Path(cfg.out_dir)

        self.agent = agent_mod.make_agent(env.OBS_DIM, self.cond_dim, env.ACTION_DIM,
                                          self.rng_init, cfg.actor_hidden(), cfg.gamma)
        if cfg.policy_ckpt:
            self._load_pretrained_policy(cfg.policy_ckpt)
        self.optimizers = agent_mod.make_optimizers(self.agent, cfg.actor_lr, cfg.critic_lr)

        self.phi = mi.make_statistics_network(self.split.surrounding_dim, self.split.agent_dim,
                                              self.rng_init, cfg.estimator_hidden(), cfg.ema_decay)
        if cfg.estimator_ckpt:
            self._load_estimator(cfg.estimator_ckpt)
        self.phi_opt = nn_core.adam_init(self.phi.params, cfg.estimator_lr)

        self.phi_emp = None
        if cfg.variant == "empowerment":
            self.phi_emp = mi.make_statistics_network(self.split.surrounding_dim, env.ACTION_DIM,
                                                      self.rng_init, cfg.estimator_hidden(),
                                                      cfg.ema_decay)
            self.phi_emp_opt = nn_core.adam_init(self.phi_emp.params, cfg.estimator_lr)
        self.psi = None
        if cfg.skill_conditioned:
            self.psi = intrinsic.make_discriminator(self.split.surrounding_dim, cfg.num_skills,
                                                    self.rng_init, cfg.estimator_hidden())
            self.psi_opt = nn_core.adam_init(self.psi.params, cfg.discriminator_lr)

        self.buffer = ReplayBuffer(cfg.buffer_size)
        self.reward_min = np.inf
        self.reward_max = -np.inf
        self._episode_log = None

    # -- loading -----------------------------------------------------------

    def _load_pretrained_policy(self, path):
        arrays = nn_core.load_checkpoint(path)
        try:
            pre = agent_mod.from_arrays(arrays)
        except KeyError as exc:
            raise CompatibilityError(f"{path} holds no policy: missing {exc}") from None
        if pre.actor_spec != self.agent.actor_spec:
            raise CompatibilityError(
                f"pretrained actor {pre.actor_spec.layer_sizes} does not match "
                f"{self.agent.actor_spec.layer_sizes}")
        self.agent = replace(self.agent, actor=nn_core.copy_params(pre.actor),
                                       actor_target=nn_core.copy_params(pre.actor))
        self.lineage["init_policy"] = {"path": str(path), "sha256": file_sha256(path)}

    def _load_estimator(self, path):
        try:
            phi = load_estimator(path)
        except KeyError as exc:
            raise CompatibilityError(str(exc)) from None
        if (phi.surrounding_dim, phi.other_dim) != (self.split.surrounding_dim, self.split.agent_dim):
            raise CompatibilityError(
                f"estimator dims ({phi.surrounding_dim}, {phi.other_dim}) do not match split "
                f"({self.split.surrounding_dim}, {self.split.agent_dim})")
        self.phi = phi
        self.lineage["estimator"] = {"path": str(path), "sha256": file_sha256(path)}

    # -- conditioning and rollouts ----------------------------------------

    def conditioning(self, goals, skills) -> np.ndarray:
        goals = np.atleast_2d(np.asarray(goals, dtype=np.float32))
        if self.cfg.zero_goal:
            goals = np.zeros_like(goals)
        if not self.skill_dim:
            return goals
        return np.concatenate([goals, intrinsic.one_hot(skills, self.skill_dim)], axis=1)

    def rollout(self, params: agent_mod.AgentParams, explore: bool,
                rng: np.random.Generator) -> TrajectoryRecord:
        """One full-length episode; success at any step counts for the episode."""
        length = self.cfg.episode_length
        state, obs = env.reset(self.cfg.env_name, rng, length)
        skill = int(rng.integers(self.skill_dim)) if self.skill_dim else -1
        cond = self.conditioning(state.goal, [skill])[0]
        observations, actions, rewards, successes = [obs], [], [], []
        for _ in range(length):
            a = agent_mod.act(params, obs, cond, explore, self.exploration, rng)
            state, res = env.step(state, a)
            obs = res.observation
            observations.append(obs)
            actions.append(a)
            rewards.append(res.task_reward)
            successes.append(1.0 if res.success else 0.0)
        return TrajectoryRecord(np.array(observations), np.array(actions), state.goal,
                                np.array(rewards), np.array(successes), skill)

    def collect(self, n: int, explore: bool = True) -> List[TrajectoryRecord]:
        params = self.agent
        if self.cfg.num_workers <= 1:
            return [self.rollout(params, explore, self.rng_rollout) for _ in range(n)]
        # completion order decides storage order, so this path is not reproducible
        seeds = self.rng_rollout.integers(0, 2 ** 63, size=n)
        with ThreadPoolExecutor(self.cfg.num_workers) as pool:
            futures = [pool.submit(self.rollout, params, explore, np.random.default_rng(int(s)))
                       for s in seeds]
            return [f.result() for f in as_completed(futures)]

    # -- rewards -----------------------------------------------------------

    def _empowerment_rewards(self, batch) -> np.ndarray:
        acts = np.empty((2, len(batch), env.ACTION_DIM), np.float32)
        surr = np.empty((2, len(batch), self.split.surrounding_dim), np.float32)
        for i, (tid, t) in enumerate(zip(batch.trajectory_ids, batch.steps)):
            traj = self.buffer.get(int(tid))
            L = len(traj)
            t2 = t + 1 if t + 1 < L else t - 1
            _, s = env.split_observation(traj.observations[[t + 1, t2 + 1]], self.split)
            acts[:, i] = traj.actions[[t, t2]]
            surr[:, i] = s
        return intrinsic.empowerment_reward(self.phi_emp, acts, surr, self.mi_cfg)

    def trajectory_mi_priority(self, trajectories: Sequence[TrajectoryRecord]) -> np.ndarray:
        """Mean clipped MI reward over every adjacent pair of each trajectory."""
        if not trajectories:
            return np.zeros(0)
        obs_t = np.concatenate([t.observations[:-1] for t in trajectories])
        obs_t1 = np.concatenate([t.observations[1:] for t in trajectories])
        _, r = mi.transition_rewards(self.phi, obs_t, obs_t1, self.split, self.mi_cfg)
        ends = np.cumsum([len(t) for t in trajectories])
        return np.array([seg.mean() for seg in np.split(r, ends[:-1])])

    # -- one batch ---------------------------------------------------------

    def train_batch(self, mode: RewardMode, stats: Dict[str, list]) -> None:
        cfg = self.cfg
        if cfg.prioritized:
            batch = self.buffer.sample_prioritized(cfg.batch_size, self.sampler, self.rng_sample)
            weights = batch.weights
        else:
            batch = self.buffer.sample_uniform(cfg.batch_size, self.rng_sample)
            weights = None
        cond = self.conditioning(batch.goals, batch.skills)
        mi_pre, mi_post = mi.transition_rewards(self.phi, batch.obs, batch.next_obs,
                                                self.split, self.mi_cfg)
        aux = np.zeros(len(batch))
        if mode is RewardMode.EMPOWERMENT:
            aux = self._empowerment_rewards(batch)
        elif mode in (RewardMode.DIAYN, RewardMode.MUSIC_PLUS_DIAYN):
            _, s_next = env.split_observation(batch.next_obs, self.split)
            aux = intrinsic.diayn_reward(self.psi, s_next, batch.skills)
        rewards = intrinsic.compose_reward(mode, batch.task_rewards.astype(np.float64), mi_post, aux)
        if cfg.terminal_on_success and mode.uses_task_reward:
            dones = batch.dones
        else:
            dones = np.zeros(len(batch), np.float32)

        self.agent, self.optimizers, losses = agent_mod.update(
            self.agent, batch.obs, cond, batch.actions, rewards, batch.next_obs, dones,
            self.optimizers, weights, self.settings)

        stats["pre"].append(float(np.mean(mi_pre)))
        stats["post"].append(float(np.mean(mi_post)))
        self.reward_min = min(self.reward_min, float(np.min(mi_post)))
        self.reward_max = max(self.reward_max, float(np.max(mi_post)))

        if cfg.prioritized and cfg.priority_refresh == "on_sample":
            ids = np.unique(batch.trajectory_ids)
            if cfg.priority_source == "td":
                td = losses["abs_td"]
                values = [float(td[batch.trajectory_ids == i].mean()) for i in ids]
            else:
                values = self.trajectory_mi_priority([self.buffer.get(int(i)) for i in ids])
            self.buffer.update_priorities(ids, values)

        if not cfg.frozen_estimator:
            traj = self.buffer.sample_trajectory(self.rng_estimator)
            self.phi, self.phi_opt, bound = mi.train_estimator_step(
                self.phi, traj, self.split, self.phi_opt, self.rng_estimator)
            stats["train_bound"].append(bound)
            if self.phi_emp is not None:
                _, surr = env.split_observation(traj.observations[1:], self.split)
                self.phi_emp, self.phi_emp_opt, _ = mi.train_on_pairs(
                    self.phi_emp, surr, traj.actions, self.phi_emp_opt, self.rng_estimator)
        if self.psi is not None:
            _, s_next = env.split_observation(batch.next_obs, self.split)
            self.psi, self.psi_opt, _ = intrinsic.train_discriminator_step(
                self.psi, s_next, batch.skills, self.psi_opt)

    # -- persistence -------------------------------------------------------

    def checkpoint_arrays(self, epoch: int) -> Dict[str, np.ndarray]:
        arrays = agent_mod.to_arrays(self.agent)
        arrays.update(policy_meta(self.cond_dim, self.skill_dim, self.cfg.zero_goal, self.split))
        arrays["meta/epoch"] = np.array([epoch], np.float32)
        arrays.update(mi.to_arrays(self.phi, "estimator"))
        if self.phi_emp is not None:
            arrays.update(mi.to_arrays(self.phi_emp, "empowerment"))
        if self.psi is not None:
            arrays.update(intrinsic.discriminator_to_arrays(self.psi))
        return arrays

    def _log_episode(self, record: dict) -> None:
        if self._episode_log is not None:
            self._episode_log.write(json.dumps(record) + "\n")

    def _diagnostics(self, row: Optional[MetricsRow], extra: dict) -> Path:
        path = self.out_dir / "diagnostics.json"
        path.write_text(json.dumps({"row": asdict(row) if row else None, "config": self.cfg.to_dict(),
                                    "buffer_trajectories": len(self.buffer), **extra},
                                   indent=2, default=str))
        return path

    # -- main loop ---------------------------------------------------------

    def evaluate_epoch(self, epoch: int):
        rng = np.random.default_rng(self.rng_eval.integers(0, 2 ** 63))
        tests = [self.rollout(self.agent, False, rng) for _ in range(self.cfg.test_rollouts_per_epoch)]
        successes = [float(t.task_rewards.max() > 0) for t in tests]
        returns = [float(t.task_rewards.sum()) for t in tests]
        disp = [env.object_path_length(t.observations) for t in tests]
        bounds = [mi.trajectory_bound_from_obs(self.phi, t.observations, self.split, rng)
                  for t in tests]
        for t, s, r, d in zip(tests, successes, returns, disp):
            self._log_episode({"epoch": epoch, "kind": "test", "skill": int(t.skill),
                               "success": bool(s), "task_return": r, "object_displacement": d})
        return tests, successes, returns, disp, bounds

    def run(self) -> TrainingResult:
        cfg = self.cfg
        out = self.out_dir
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        prior_path = nn_core.save_checkpoint(self.checkpoint_arrays(0), ckpt_dir / "prior.ckpt")
        start = time.perf_counter()
        rows: List[MetricsRow] = []
        steps_per_epoch: List[int] = []
        tests: List[TrajectoryRecord] = []
        metrics_path = out / "metrics.csv"
        emit_metrics(rows, metrics_path)
        with (out / "episodes.jsonl").open("w") as self._episode_log:
            for epoch in range(cfg.epochs):
                mode = cfg.mode_for_epoch(epoch)
                stats = {"pre": [], "post": [], "train_bound": []}
                env_steps = 0
                for cycle in range(cfg.cycles_per_epoch):
                    for traj in self.collect(cfg.rollouts_per_cycle, explore=True):
                        traj.priority = self.buffer.max_priority()
                        self.buffer.store(traj)
                        env_steps += len(traj)
                        self._log_episode({
                            "epoch": epoch, "cycle": cycle, "kind": "train",
                            "trajectory_id": traj.id, "skill": int(traj.skill),
                            "success": bool(traj.task_rewards.max() > 0),
                            "task_return": float(traj.task_rewards.sum()),
                            "object_displacement": env.object_path_length(traj.observations),
                        })
                    for _ in range(cfg.batches_per_cycle):
                        try:
                            self.train_batch(mode, stats)
                        except NonFiniteError as exc:
                            dump = self._diagnostics(None, {"mode": mode.value, "epoch": epoch,
                                                            "cycle": cycle, "error": str(exc)})
                            raise TrainingAborted(f"{exc}; see {dump}") from exc
                if cfg.prioritized and cfg.priority_refresh == "per_epoch":
                    trajs = list(self.buffer.trajectories)
                    self.buffer.update_priorities([t.id for t in trajs],
                                                  self.trajectory_mi_priority(trajs))
                steps_per_epoch.append(env_steps)

                tests, successes, returns, disp, bounds = self.evaluate_epoch(epoch)
                row = MetricsRow(
                    epoch=epoch + 1,
                    success_rate=float(np.mean(successes)),
                    task_return=float(np.mean(returns)),
                    intrinsic_pre_clip=float(np.mean(stats["pre"])),
                    intrinsic_post_clip=float(np.mean(stats["post"])),
                    estimator_bound=float(np.mean(bounds)),
                    object_displacement=float(np.mean(disp)),
                    wall_clock_seconds=(time.perf_counter() - start) if cfg.record_timing else 0.0,
                )
                if not all(np.isfinite(getattr(row, c)) for c in METRICS_COLUMNS):
                    dump = self._diagnostics(row, {"mode": mode.value, "epoch": epoch})
                    raise TrainingAborted(f"non-finite metrics at epoch {epoch + 1}; see {dump}")
                rows.append(row)
                emit_metrics(rows, metrics_path)
                nn_core.save_checkpoint(self.checkpoint_arrays(epoch + 1),
                                        ckpt_dir / f"epoch_{epoch + 1:03d}.ckpt")
                log.info("epoch %d: %s", epoch + 1, row)
        self._episode_log = None

        final_path = nn_core.save_checkpoint(self.checkpoint_arrays(cfg.epochs), ckpt_dir / "final.ckpt")
        save_trajectories(tests, out / "test_trajectories.jsonl")
        rmin = float(self.reward_min) if rows else float("nan")
        rmax = float(self.reward_max) if rows else float("nan")
        manifest = {
            "config": cfg.to_dict(),
            "seed": cfg.seed,
            "variant": cfg.variant,
            "reward_modes": [cfg.mode_for_epoch(e).value for e in range(cfg.epochs)],
            "lineage": self.lineage,
            "env_steps_per_epoch": steps_per_epoch,
            "intrinsic_reward_range": [rmin, rmax] if rows else None,
            "deterministic": cfg.num_workers <= 1,
            "checkpoints": {
                p.name: file_sha256(p) for p in sorted(ckpt_dir.glob("*.ckpt"))
            },
        }
        (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return TrainingResult(rows, out, final_path, prior_path, steps_per_epoch, (rmin, rmax))


def run_training(cfg: RunConfig) -> TrainingResult:
    return Trainer(cfg).run()


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalResult:
    success_rate: float
    episodes: List[dict] = field(default_factory=list)

    @property
    def mean_object_displacement(self) -> float:
        return float(np.mean([e["object_displacement"] for e in self.episodes]))

    @property
    def mean_task_return(self) -> float:
        return float(np.mean([e["task_return"] for e in self.episodes]))


def evaluate(checkpoint, env_name: str, n_rollouts: int, seed: int = 0,
             episode_length: int = env.DEFAULT_EPISODE_LENGTH) -> EvalResult:
    """Success rate of the deterministic policy stored in ``checkpoint``."""
    if n_rollouts < 1:
        raise ValueError("evaluation needs at least one rollout")
    arrays = nn_core.load_checkpoint(checkpoint)
    try:
        params = agent_mod.from_arrays(arrays)
    except KeyError as exc:
        raise CompatibilityError(f"{checkpoint} holds no policy: missing {exc}") from None
    obs_dim = _meta_int(arrays, "meta/obs_dim", env.OBS_DIM)
    skill_dim = _meta_int(arrays, "meta/skill_dim")
    zero_goal = bool(_meta_int(arrays, "meta/zero_goal"))
    if obs_dim != env.OBS_DIM or params.input_dim != env.OBS_DIM + env.GOAL_DIM + skill_dim:
        raise CompatibilityError(
            f"policy expects {params.input_dim} inputs, {env_name} provides "
            f"{env.OBS_DIM} observation + {env.GOAL_DIM} goal + {skill_dim} skill entries")
    if params.action_dim != env.ACTION_DIM:
        raise CompatibilityError(f"policy emits {params.action_dim} actions, env takes {env.ACTION_DIM}")
    cfg = RunConfig(env_name=env_name, episode_length=episode_length,
                    variant="diayn" if skill_dim else ("music-u" if zero_goal else "task"),
                    num_skills=max(skill_dim, 2))
    runner = Trainer.__new__(Trainer)
    runner.cfg = cfg
    runner.skill_dim = skill_dim
    runner.exploration = cfg.exploration_config()
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(n_rollouts):
        t = runner.rollout(params, False, rng)
        episodes.append({"success": bool(t.task_rewards.max() > 0),
                         "task_return": float(t.task_rewards.sum()),
                         "object_displacement": env.object_path_length(t.observations),
                         "skill": int(t.skill)})
    return EvalResult(float(np.mean([e["success"] for e in episodes])), episodes)


# ---------------------------------------------------------------------------
# MI report


@dataclass
class MiReportRow:
    agent_component: str
    surrounding_component: str
    prior_mean: float
    prior_std: float
    post_mean: float
    post_std: float


DEFAULT_REPORT_PAIRS = (("agent_pos", "object_pos"), ("agent_pos", "object_vel"))


def _pair_values(phi: mi.StatisticsNetwork, trajectories, split: env.StateSplit, seed: int):
    rng = np.random.default_rng(seed)
    return np.array([mi.trajectory_bound_from_obs(phi, t.observations, split, rng)
                     for t in trajectories])


def mi_report(prior, post, trajectories: Sequence[TrajectoryRecord],
              pairs: Sequence[Tuple[str, str]] = DEFAULT_REPORT_PAIRS,
              seed: int = 0) -> List[MiReportRow]:
    """Trajectory-level bound (mean, std over trajectories) per state pair and checkpoint.

    ``prior`` and ``post`` are estimator checkpoints (paths) or networks.
    Both are evaluated with the same shuffles.
    """
    if len(trajectories) == 0:
        raise ValueError("mi_report needs at least one trajectory")
    nets = {"prior": load_estimator(prior), "post": load_estimator(post)}
    rows = []
    for a_name, s_name in pairs:
        split = env.StateSplit.from_names([a_name], [s_name])
        values = {}
        for key, phi in nets.items():
            if (phi.surrounding_dim, phi.other_dim) != (split.surrounding_dim, split.agent_dim):
                raise CompatibilityError(
                    f"{key} estimator takes ({phi.surrounding_dim}, {phi.other_dim}) inputs; "
                    f"pair ({a_name}, {s_name}) has ({split.surrounding_dim}, {split.agent_dim})")
            values[key] = _pair_values(phi, trajectories, split, seed)
        rows.append(MiReportRow(a_name, s_name,
                                float(values["prior"].mean()), float(values["prior"].std()),
                                float(values["post"].mean()), float(values["post"].std())))
    return rows


def format_report(rows: Sequence[MiReportRow]) -> str:
    lines = [f"{'pair':<32} {'prior':>18} {'post':>18}"]
    for r in rows:
        pair = f"MI({r.agent_component}; {r.surrounding_component})"
        lines.append(f"{pair:<32} {r.prior_mean:>8.3f} +- {r.prior_std:<6.3f} "
                     f"{r.post_mean:>8.3f} +- {r.post_std:<6.3f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Estimator validation on data with known MI


@dataclass
class ValidationConfig:
    steps: int = 2000
    batch_size: int = 256
    eval_samples: int = 20000
    seed: int = 0
    hidden: Tuple[int, ...] = (64, 64)
    learning_rate: float = 1e-3
    ema_decay: float = 0.99


@dataclass
class SuiteResult:
    name: str
    truth: float
    bound: float
    low: float
    high: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.low <= self.bound <= self.high


@dataclass
class ValidationReport:
    results: List[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def format(self) -> str:
        lines = []
        for r in self.results:
            flag = "PASS" if r.passed else "FAIL"
            lines.append(f"{flag} {r.name:<16} truth={r.truth:.4f} bound={r.bound:.4f} "
                         f"interval=[{r.low:.2f}, {r.high:.2f}] ({r.seconds:.1f}s)")
        return "\n".join(lines)


GAUSSIAN_INTERVALS = {0.0: (-0.1, 0.1), 0.5: (0.05, 0.20), 0.9: (0.60, 0.90)}


def gaussian_pairs(rho: float, n: int, rng: np.random.Generator, dims: int = 1):
    """``n`` samples of ``dims`` independent unit-Gaussian pairs with correlation ``rho``."""
    x = rng.standard_normal((n, dims))
    y = rho * x + np.sqrt(1.0 - rho * rho) * rng.standard_normal((n, dims))
    return x.astype(np.float32), y.astype(np.float32)


def fit_estimator(sampler, surrounding_dim: int, other_dim: int, vcfg: ValidationConfig,
                  rng: np.random.Generator) -> mi.StatisticsNetwork:
    """Train a fresh statistics network on batches drawn from ``sampler(n, rng)``."""
    phi = mi.make_statistics_network(surrounding_dim, other_dim, rng, vcfg.hidden, vcfg.ema_decay)
    opt = nn_core.adam_init(phi.params, vcfg.learning_rate)
    for _ in range(vcfg.steps):
        s, o = sampler(vcfg.batch_size, rng)
        phi, opt, _ = mi.train_on_pairs(phi, s, o, opt, rng)
    return phi


def held_out_bound(phi, sampler, n: int, rng) -> float:
    s, o = sampler(n, rng)
    return mi.trajectory_bound(phi, s, o, rng)


def validate_estimator(vcfg: Optional[ValidationConfig] = None) -> ValidationReport:
    """Gaussian suites with known MI plus an independent-uniform suite."""
    vcfg = vcfg or ValidationConfig()
    results = []
    for k, (rho, (low, high)) in enumerate(GAUSSIAN_INTERVALS.items()):
        rng = np.random.default_rng([vcfg.seed, k])
        t0 = time.perf_counter()
        sampler = lambda n, r, rho=rho: gaussian_pairs(rho, n, r)  # noqa: E731
        phi = fit_estimator(sampler, 1, 1, vcfg, rng)
        bound = held_out_bound(phi, sampler, vcfg.eval_samples, rng)
        results.append(SuiteResult(f"gaussian rho={rho}", mi.analytic_gaussian_mi(rho), bound,
                                   low, high, time.perf_counter() - t0))
    rng = np.random.default_rng([vcfg.seed, 99])
    t0 = time.perf_counter()
    uniform = lambda n, r: (r.uniform(size=(n, 2)).astype(np.float32),  # noqa: E731
                            r.uniform(size=(n, 2)).astype(np.float32))
    phi = fit_estimator(uniform, 2, 2, vcfg, rng)
    bound = held_out_bound(phi, uniform, vcfg.eval_samples, rng)
    results.append(SuiteResult("independent", 0.0, bound, -0.1, 0.1, time.perf_counter() - t0))
    return ValidationReport(results)
