"""
Mini-batch training with CVaR-threshold selection, and evaluation.
"""

from voltrisk.trainer.config import TrainConfig
from voltrisk.trainer.evaluate import EvalReport, VoltageStats, evaluate, voltage_stats
from voltrisk.trainer.loop import (
    BatchSizeError,
    DivergenceError,
    EmptySplitError,
    TrainLog,
    TrainRecord,
    TrainSummary,
    draw_batches,
    read_summary,
    read_train_log,
    summarize,
    train,
    write_summary,
    write_train_log,
)
from voltrisk.trainer.optim import (
    NonFiniteGradientError,
    OptimizerState,
    TrainingError,
    optimizer_step,
)

__all__ = [
    "TrainConfig",
    "TrainLog",
    "TrainRecord",
    "TrainSummary",
    "OptimizerState",
    "EvalReport",
    "VoltageStats",
    "TrainingError",
    "DivergenceError",
    "NonFiniteGradientError",
    "BatchSizeError",
    "EmptySplitError",
    "draw_batches",
    "train",
    "optimizer_step",
    "evaluate",
    "voltage_stats",
    "summarize",
    "write_train_log",
    "read_train_log",
    "write_summary",
    "read_summary",
]
