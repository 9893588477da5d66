"""Mutual information bounds toolkit.

Contrastive upper bounds (club family, leave-one-out), critic lower bounds
(nwj, mine, infonce), the correlated-Gaussian simulation benchmark, and MI
minimisation against a linear-Gaussian channel with exact oracle.
"""

from ._core import (
    Channel,
    Rng,
    Source,
    TrainConfig,
    Trainer,
    estimators,
    kind,
    known_estimate,
    minimize,
    quality_stats,
    rho_for_mi,
    run_schedule,
    time_estimators,
)

__all__ = [
    "Channel",
    "Rng",
    "Source",
    "TrainConfig",
    "Trainer",
    "config",
    "estimators",
    "kind",
    "known_estimate",
    "minimize",
    "quality_stats",
    "rho_for_mi",
    "run_schedule",
    "time_estimators",
]

__version__ = "0.1.0"


def config(**overrides):
    """TrainConfig with keyword overrides, e.g. config(batch_size=128)."""
    cfg = TrainConfig()
    for name, value in overrides.items():
        if not hasattr(cfg, name):
            raise ValueError(f"unknown TrainConfig field '{name}'")
        setattr(cfg, name, value)
    return cfg
