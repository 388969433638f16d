"""Deterministic headless simulator of self-replicating, self-assembling machines."""
from __future__ import annotations

__version__ = "0.1.0"

from .genome import SeedSpec, parse_seed, predict_fold, validate_seed  # noqa: E402
from .physics import WorldConfig  # noqa: E402
from .engine import SimState, Metrics, init, step, run, metrics, checkpoint_save, checkpoint_load  # noqa: E402

__all__ = [
    "SeedSpec",
    "parse_seed",
    "predict_fold",
    "validate_seed",
    "WorldConfig",
    "SimState",
    "Metrics",
    "init",
    "step",
    "run",
    "metrics",
    "checkpoint_save",
    "checkpoint_load",
]
