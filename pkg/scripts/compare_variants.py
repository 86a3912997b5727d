"""Train several variants over several seeds and tabulate final performance.

    python scripts/compare_variants.py --variants task music-r music-u --seeds 0 1 2 --out runs/cmp
"""

import argparse
from pathlib import Path

import numpy as np

from musicrl import trainer
from musicrl.config import VARIANTS, RunConfig
from musicrl.env import random_policy_baseline

p = argparse.ArgumentParser()
p.add_argument("--variants", nargs="+", default=["task", "music-r", "music-u"],
               choices=[v for v in VARIANTS if v not in ("music-f", "music-t")])
p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
p.add_argument("--epochs", type=int, default=20)
p.add_argument("--eval-episodes", type=int, default=100)
p.add_argument("--out", type=Path, default=Path("runs/compare"))
args = p.parse_args()

print(f"random baseline displacement {random_policy_baseline('point-push', 100, 0):.4f}")
print(f"{'variant':<14}{'seed':>5}{'success':>10}{'displacement':>14}{'bound':>9}")
for variant in args.variants:
    succ, disp = [], []
    for seed in args.seeds:
        cfg = RunConfig(variant=variant, seed=seed, epochs=args.epochs, record_timing=False,
                        out_dir=str(args.out / f"{variant}_s{seed}"))
        res = trainer.run_training(cfg)
        ev = trainer.evaluate(res.final_checkpoint, cfg.env_name, args.eval_episodes, seed=1000 + seed)
        succ.append(ev.success_rate)
        disp.append(ev.mean_object_displacement)
        bound = res.rows[-1].estimator_bound if res.rows else float("nan")
        print(f"{variant:<14}{seed:>5}{succ[-1]:>10.3f}{disp[-1]:>14.4f}{bound:>9.4f}", flush=True)
    print(f"{variant:<14}{'mean':>5}{np.mean(succ):>10.3f}{np.mean(disp):>14.4f}")
