"""Command line entry point: ``musicrl {train,eval,mi-report,validate-estimator}``.

Runs are bit-reproducible for a given seed only with ``num_workers = 1``;
parallel rollout workers store trajectories in completion order.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import trainer
from .config import VARIANTS, load_config
from .env import ENV_NAMES
from .errors import CheckpointIntegrityError, CheckpointVersionError, CompatibilityError, ConfigError


def _pairs(text: str):
    out = []
    for item in text.split(","):
        a, _, s = item.partition(":")
        if not a or not s:
            raise argparse.ArgumentTypeError(f"pair must look like agent:surrounding, got {item!r}")
        out.append((a.strip(), s.strip()))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="musicrl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one variant; writes metrics, logs and checkpoints")
    t.add_argument("--env", choices=ENV_NAMES, default=None)
    t.add_argument("--variant", choices=VARIANTS, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--config", type=Path, default=None, help="key = value file")
    t.add_argument("--policy-ckpt", default=None, help="pretrained policy (music-f)")
    t.add_argument("--estimator-ckpt", default=None, help="trained estimator (music-t)")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("eval", help="success rate of a saved policy")
    e.add_argument("--ckpt", type=Path, required=True)
    e.add_argument("--env", choices=ENV_NAMES, required=True)
    e.add_argument("--n", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)

    m = sub.add_parser("mi-report", help="MI between state components before and after training")
    m.add_argument("--prior-ckpt", type=Path, required=True)
    m.add_argument("--post-ckpt", type=Path, required=True)
    m.add_argument("--data", type=Path, required=True,
                   help="run directory or trajectories .jsonl file")
    m.add_argument("--pairs", type=_pairs, default=list(trainer.DEFAULT_REPORT_PAIRS),
                   help="comma list of agent:surrounding component names")
    m.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("validate-estimator", help="check the estimator on data with known MI")
    v.add_argument("--steps", type=int, default=trainer.ValidationConfig.steps)
    v.add_argument("--seed", type=int, default=0)
    return p


def _train(args) -> int:
    cfg = load_config(args.config, env_name=args.env, variant=args.variant, seed=args.seed,
                      policy_ckpt=args.policy_ckpt, estimator_ckpt=args.estimator_ckpt,
                      epochs=args.epochs, out_dir=str(args.out))
    if cfg.num_workers > 1:
        print(f"note: num_workers={cfg.num_workers}; results are not bit-reproducible",
              file=sys.stderr)
    result = trainer.run_training(cfg)
    last = result.rows[-1] if result.rows else None
    print(f"wrote {result.out_dir}")
    if last:
        print(f"final epoch {last.epoch}: success_rate={last.success_rate:.3f} "
              f"object_displacement={last.object_displacement:.4f} "
              f"estimator_bound={last.estimator_bound:.4f}")
    return 0


def _eval(args) -> int:
    res = trainer.evaluate(args.ckpt, args.env, args.n, args.seed)
    print(f"success_rate={res.success_rate:.4f} n={args.n} "
          f"mean_object_displacement={res.mean_object_displacement:.4f}")
    return 0


def _mi_report(args) -> int:
    trajectories = trainer.load_trajectories(args.data)
    rows = trainer.mi_report(args.prior_ckpt, args.post_ckpt, trajectories, args.pairs, args.seed)
    print(trainer.format_report(rows))
    return 0


def _validate(args) -> int:
    report = trainer.validate_estimator(trainer.ValidationConfig(steps=args.steps, seed=args.seed))
    print(report.format())
    return 0 if report.passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"train": _train, "eval": _eval, "mi-report": _mi_report,
                "validate-estimator": _validate}
    try:
        return handlers[args.command](args)
    except (ConfigError, CompatibilityError, CheckpointIntegrityError,
            CheckpointVersionError, trainer.TrainingAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
