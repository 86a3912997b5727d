import json

import numpy as np
import pytest

from musicrl import agent as agent_mod
from musicrl import env, nn_core, trainer
from musicrl import mi_estimator as mi
from musicrl.config import VARIANTS, RunConfig
from musicrl.errors import CompatibilityError, NonFiniteError
from musicrl.trainer import METRICS_COLUMNS, MetricsRow

TINY = dict(epochs=2, cycles_per_epoch=2, rollouts_per_cycle=2, batches_per_cycle=3, batch_size=16,
            test_rollouts_per_epoch=2, episode_length=10, hidden_units=8, hidden_layers=2,
            estimator_hidden_units=8, estimator_hidden_layers=1, record_timing=False)


def tiny(tmp_path, name="run", **kw):
    values = dict(TINY, out_dir=str(tmp_path / name))
    values.update(kw)
    return RunConfig(**values)


@pytest.fixture(scope="module")
def music_u_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mu")
    return trainer.run_training(tiny(out, variant="music-u"))


def test_outputs_written(music_u_run):
    out = music_u_run.out_dir
    for name in ("metrics.csv", "episodes.jsonl", "run_manifest.json", "test_trajectories.jsonl"):
        assert (out / name).is_file()
    ckpts = sorted(p.name for p in (out / "checkpoints").glob("*.ckpt"))
    assert ckpts == ["epoch_001.ckpt", "epoch_002.ckpt", "final.ckpt", "prior.ckpt"]
    rows = trainer.read_metrics(out / "metrics.csv")
    assert [r.epoch for r in rows] == [1, 2]
    assert all(0.0 <= r.success_rate <= 1.0 for r in rows)
    episodes = [json.loads(line) for line in (out / "episodes.jsonl").read_text().splitlines()]
    assert sum(e["kind"] == "train" for e in episodes) == 2 * 2 * 2
    assert sum(e["kind"] == "test" for e in episodes) == 2 * 2


def test_manifest_contents(music_u_run):
    manifest = json.loads((music_u_run.out_dir / "run_manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["variant"] == "music-u"
    assert manifest["config"]["episode_length"] == 10
    for name, digest in manifest["checkpoints"].items():
        assert digest == trainer.file_sha256(music_u_run.out_dir / "checkpoints" / name)


def test_schedule_accounting(music_u_run):
    assert music_u_run.env_steps_per_epoch == [2 * 2 * 10] * 2


def test_intrinsic_rewards_within_clip(music_u_run):
    low, high = music_u_run.intrinsic_range
    assert 0.0 <= low <= high <= 1.0


def test_zero_epoch_run(tmp_path):
    res = trainer.run_training(tiny(tmp_path, epochs=0))
    assert res.rows == []
    assert (res.out_dir / "metrics.csv").read_text().strip() == ",".join(METRICS_COLUMNS)
    arrays = nn_core.load_checkpoint(res.final_checkpoint)
    agent_mod.from_arrays(arrays)
    mi.from_arrays(arrays)


@pytest.mark.parametrize("variant", [v for v in VARIANTS if v not in ("music-f", "music-t")])
def test_every_variant_runs(tmp_path, variant):
    res = trainer.run_training(tiny(tmp_path, variant=variant, epochs=1))
    assert len(res.rows) == 1
    assert all(np.isfinite(getattr(res.rows[0], c)) for c in METRICS_COLUMNS)


def test_same_seed_bit_identical(tmp_path):
    a = trainer.run_training(tiny(tmp_path, "a", variant="music-p", seed=3))
    b = trainer.run_training(tiny(tmp_path, "b", variant="music-p", seed=3))
    assert (a.out_dir / "metrics.csv").read_bytes() == (b.out_dir / "metrics.csv").read_bytes()
    assert a.final_checkpoint.read_bytes() == b.final_checkpoint.read_bytes()


def test_different_seed_differs(tmp_path):
    a = trainer.run_training(tiny(tmp_path, "a", seed=1, epochs=1))
    b = trainer.run_training(tiny(tmp_path, "b", seed=2, epochs=1))
    assert (a.out_dir / "metrics.csv").read_bytes() != (b.out_dir / "metrics.csv").read_bytes()


def test_music_t_freezes_estimator(tmp_path, music_u_run):
    source = music_u_run.final_checkpoint
    res = trainer.run_training(tiny(tmp_path, variant="music-t", estimator_ckpt=str(source)))
    before = mi.to_arrays(trainer.load_estimator(source))
    after = nn_core.load_checkpoint(res.final_checkpoint)
    for k, v in before.items():
        assert after[k].tobytes() == v.tobytes()
    manifest = json.loads((res.out_dir / "run_manifest.json").read_text())
    assert manifest["lineage"]["estimator"]["sha256"] == trainer.file_sha256(source)


def test_music_f_starts_from_pretrained_actor(tmp_path, music_u_run):
    source = music_u_run.final_checkpoint
    cfg = tiny(tmp_path, variant="music-f", policy_ckpt=str(source), epochs=0)
    t = trainer.Trainer(cfg)
    pre = agent_mod.from_arrays(nn_core.load_checkpoint(source))
    for k in pre.actor:
        assert np.array_equal(t.agent.actor[k], pre.actor[k])
        assert np.array_equal(t.agent.actor_target[k], pre.actor[k])
    res = t.run()
    manifest = json.loads((res.out_dir / "run_manifest.json").read_text())
    assert manifest["lineage"]["init_policy"]["sha256"] == trainer.file_sha256(source)
    assert manifest["reward_modes"] == []


def test_music_f_rejects_incompatible_policy(tmp_path, music_u_run):
    cfg = tiny(tmp_path, variant="music-f", policy_ckpt=str(music_u_run.final_checkpoint),
               hidden_units=16)
    with pytest.raises(CompatibilityError):
        trainer.Trainer(cfg)


def test_music_t_rejects_mismatched_split(tmp_path, music_u_run):
    cfg = tiny(tmp_path, variant="music-t", estimator_ckpt=str(music_u_run.final_checkpoint),
               surrounding_state="object_pos,object_vel")
    with pytest.raises(CompatibilityError):
        trainer.Trainer(cfg)


def test_non_finite_aborts_with_diagnostics(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise NonFiniteError("critic loss is nan")
    monkeypatch.setattr(trainer.agent_mod, "update", broken)
    cfg = tiny(tmp_path)
    with pytest.raises(trainer.TrainingAborted):
        trainer.run_training(cfg)
    diag = json.loads((tmp_path / "run" / "diagnostics.json").read_text())
    assert "nan" in diag["error"] and diag["epoch"] == 0


def test_workers_path_runs(tmp_path):
    res = trainer.run_training(tiny(tmp_path, num_workers=2, epochs=1))
    assert res.env_steps_per_epoch == [40]
    manifest = json.loads((res.out_dir / "run_manifest.json").read_text())
    assert manifest["deterministic"] is False


def test_trajectory_priorities_follow_mi(tmp_path):
    t = trainer.Trainer(tiny(tmp_path, variant="music-p"))
    trajs = t.collect(3)
    pri = t.trajectory_mi_priority(trajs)
    for tr, p in zip(trajs, pri):
        _, r = mi.transition_rewards(t.phi, tr.observations[:-1], tr.observations[1:], t.split, t.mi_cfg)
        assert p == pytest.approx(r.mean())


# -- evaluation ----------------------------------------------------------------


def test_evaluate_errors(tmp_path, music_u_run):
    with pytest.raises(ValueError):
        trainer.evaluate(music_u_run.final_checkpoint, "point-push", 0)
    params = agent_mod.make_agent(env.OBS_DIM, 5, env.ACTION_DIM, np.random.default_rng(0), (8,))
    nn_core.save_checkpoint(agent_mod.to_arrays(params), tmp_path / "odd.ckpt")
    with pytest.raises(CompatibilityError):
        trainer.evaluate(tmp_path / "odd.ckpt", "point-push", 3)
    nn_core.save_checkpoint({"x": np.zeros(1)}, tmp_path / "junk.ckpt")
    with pytest.raises(CompatibilityError):
        trainer.evaluate(tmp_path / "junk.ckpt", "point-push", 3)


def test_random_weights_policy_rarely_succeeds(tmp_path):
    params = agent_mod.make_agent(env.OBS_DIM, env.GOAL_DIM, env.ACTION_DIM, np.random.default_rng(0))
    path = trainer.save_policy_checkpoint(params, tmp_path / "rand.ckpt")
    res = trainer.evaluate(path, "point-push", 100, seed=0)
    assert res.success_rate <= 0.05
    assert trainer.evaluate(path, "point-push", 100, seed=0).success_rate == res.success_rate
    assert len(res.episodes) == 100


# -- mi report -----------------------------------------------------------------


def test_mi_report_prior_near_zero(music_u_run):
    trajs = trainer.load_trajectories(music_u_run.out_dir)
    rows = trainer.mi_report(music_u_run.prior_checkpoint, music_u_run.final_checkpoint, trajs)
    assert [(r.agent_component, r.surrounding_component) for r in rows] == list(trainer.DEFAULT_REPORT_PAIRS)
    assert all(abs(r.prior_mean) <= 0.1 for r in rows)
    assert "MI(agent_pos; object_pos)" in trainer.format_report(rows)


def test_mi_report_errors(tmp_path, music_u_run):
    with pytest.raises(ValueError):
        trainer.mi_report(music_u_run.prior_checkpoint, music_u_run.final_checkpoint, [])
    trajs = trainer.load_trajectories(music_u_run.out_dir)
    small = mi.make_statistics_network(1, 2, np.random.default_rng(0), (4,))
    with pytest.raises(CompatibilityError):
        trainer.mi_report(small, music_u_run.final_checkpoint, trajs)


def test_trajectory_file_roundtrip(tmp_path, music_u_run):
    trajs = trainer.load_trajectories(music_u_run.out_dir / "test_trajectories.jsonl")
    trainer.save_trajectories(trajs, tmp_path / "t.jsonl")
    back = trainer.load_trajectories(tmp_path / "t.jsonl")
    assert len(back) == len(trajs) == 2
    assert all(np.array_equal(a.observations, b.observations) for a, b in zip(trajs, back))


# -- metrics file --------------------------------------------------------------


def test_emit_metrics_empty_and_roundtrip(tmp_path):
    path = trainer.emit_metrics([], tmp_path / "m.csv")
    assert path.read_text() == ",".join(METRICS_COLUMNS) + "\n"
    rows = [MetricsRow(1, 0.1, 1 / 3, -2.5e-7, 0.123456789, 1e10, np.pi, 0.0),
            MetricsRow(2, 1.0, 0.0, 5.0, 1.0, -0.25, 0.0, 12.5)]
    trainer.emit_metrics(rows, path)
    back = trainer.read_metrics(path)
    assert back == rows
    assert path.read_text().splitlines()[0].split(",") == [
        "epoch", "success_rate", "task_return", "intrinsic_pre_clip", "intrinsic_post_clip",
        "estimator_bound", "object_displacement", "wall_clock_seconds"]


def test_read_metrics_rejects_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        trainer.read_metrics(tmp_path / "m.csv")


def test_validate_estimator_small_budget_reports_each_suite():
    report = trainer.validate_estimator(trainer.ValidationConfig(steps=20, eval_samples=500))
    assert [r.name for r in report.results] == ["gaussian rho=0.0", "gaussian rho=0.5",
                                                "gaussian rho=0.9", "independent"]
    assert "interval" in report.format()
