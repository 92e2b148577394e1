"""Reference desk-scale study setup: a 3-bus system and training configs.

The system is sized against the default synthetic load profile (mean around
900 MW): three units whose combined capacity comfortably covers peak load,
ramp limits well above typical hourly swings, and two corridors whose limits
bind only on heavy hours.  Penalty prices: shortage 50, excess 0.5, line
violation 50 $/MWh; outer convergence tolerance 1e-6 MW.
"""

from __future__ import annotations

from .grid import Generator, Line, SystemConfig, validate_system
from .train import TrainingConfig


def reference_system(horizon: int = 24) -> SystemConfig:
    return validate_system(
        SystemConfig(
            buses=("b1", "b2", "b3"),
            generators=(
                Generator(
                    id="g1", bus="b1", a=0.0008, b=1.0, c=30.0,
                    p_min=100.0, p_max=600.0, ramp_up=150.0, ramp_down=150.0,
                ),
                Generator(
                    id="g2", bus="b2", a=0.0015, b=1.8, c=20.0,
                    p_min=50.0, p_max=400.0, ramp_up=180.0, ramp_down=180.0,
                ),
                Generator(
                    id="g3", bus="b3", a=0.003, b=3.0, c=10.0,
                    p_min=0.0, p_max=300.0, ramp_up=300.0, ramp_down=300.0,
                ),
            ),
            lines=(
                Line(id="l12", shift_factors=(0.4, -0.2, -0.1), flow_limit=160.0),
                Line(id="l23", shift_factors=(-0.1, 0.35, -0.15), flow_limit=130.0),
            ),
            load_factors=(0.5, 0.3, 0.2),
            lambda_s=50.0,
            lambda_e=0.5,
            lambda_l=50.0,
            horizon=horizon,
        )
    )


def desk_training_config(seed: int = 0) -> TrainingConfig:
    """Shrunk budgets that keep one full study under a few minutes."""
    return TrainingConfig(
        n_train=10,
        pretrain_epochs=500,
        pretrain_batch=32,
        task_batch=8,
        pretrain_lr=1e-3,
        task_lr=3e-4,
        seed=seed,
        task_samples_per_epoch=768,
        val_samples=96,
    )
