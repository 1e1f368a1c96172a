"""
Command-line interface for voltrisk.
"""

from voltrisk.cli.experiment import (
    ArmSpec,
    ExperimentConfig,
    evaluate_models,
    preset_experiment,
    run_experiment,
    train_arm,
)
from voltrisk.cli.main import cli, main

__all__ = [
    "cli",
    "main",
    "ArmSpec",
    "ExperimentConfig",
    "evaluate_models",
    "preset_experiment",
    "run_experiment",
    "train_arm",
]
