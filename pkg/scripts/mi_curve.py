"""Trajectory-level and mean pair-level bound for every checkpoint of a run."""

import argparse
import json
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from musicrl import env, trainer
from musicrl import mi_estimator as mi
from musicrl.config import RunConfig

p = argparse.ArgumentParser()
p.add_argument("run_dir", type=Path)
args = p.parse_args()

manifest = json.loads((args.run_dir / "run_manifest.json").read_text())
split = RunConfig(**manifest["config"]).split()
held_out = trainer.load_trajectories(args.run_dir)
traj_level, pair_level = [], []
for path in sorted((args.run_dir / "checkpoints").glob("epoch_*.ckpt")):
    phi = trainer.load_estimator(path)
    parts = [env.split_observation(t.observations, split) for t in held_out]
    tb = np.mean([mi.trajectory_bound(phi, s, a, np.random.default_rng(k)) for k, (a, s) in enumerate(parts)])
    pb = np.mean([mi.mean_pair_bound(phi, s, a) for a, s in parts])
    traj_level.append(tb)
    pair_level.append(pb)
    print(f"{path.name}  trajectory={tb:.5f}  pair={pb:.7f}")
if len(traj_level) > 1:
    print(f"spearman = {spearmanr(traj_level, pair_level).statistic:.3f}")
