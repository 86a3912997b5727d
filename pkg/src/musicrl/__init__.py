"""Mutual-information intrinsic rewards for goal-conditioned control."""

from .config import RunConfig, load_config
from .trainer import evaluate, mi_report, run_training, validate_estimator

__all__ = ["RunConfig", "load_config", "run_training", "evaluate", "mi_report",
           "validate_estimator"]
__version__ = "0.1.0"
