"""
Mini-batch training with CVaR-threshold batch selection.

Per drawn batch the exact empirical CVaR of the risk terms in the loss mode
is compared against a running threshold γ. With selection enabled a batch is
used only when its CVaR is >= γ, and γ then moves up to it; skipped batches
change nothing. γ starts at 0 and, unless threshold_reset is off, returns to
0 at the start of every epoch.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from voltrisk.feeder.models import FeederModel, SensitivityPair
from voltrisk.nn.losses import (
    SampleBatch,
    batch_cvar,
    combined_loss_grad,
    initial_betas,
    make_batch,
    prediction_errors,
)
from voltrisk.nn.policy import PolicyParams, feature_stats
from voltrisk.opf.models import Dataset, FeederMismatchError
from voltrisk.trainer.config import TrainConfig
from voltrisk.trainer.optim import OptimizerState, TrainingError, optimizer_step
from voltrisk.utils.io import atomic_write

logger = logging.getLogger(__name__)


class DivergenceError(TrainingError):
    """The training loss exploded or became non-finite."""

    pass


class BatchSizeError(TrainingError):
    """The batch size exceeds the training split."""

    pass


class EmptySplitError(TrainingError):
    """A dataset split holds no samples."""

    pass


@dataclass
class TrainRecord:
    """One drawn mini-batch."""

    epoch: int
    batch_id: int
    batch_cvar: float
    threshold: float
    accepted: bool
    loss_components: Dict[str, float]
    param_delta: float


@dataclass
class TrainLog:
    """
    Per-batch records and run totals.

    epoch_losses holds the training-split MSE after every epoch.
    """

    records: List[TrainRecord] = field(default_factory=list)
    epochs: int = 0
    batches_drawn: int = 0
    gradient_updates: int = 0
    wall_time: float = 0.0
    epoch_times: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)
    stop_reason: str = "max_epochs"
    final_train_loss: float = float("nan")


class TrainSummary(BaseModel):
    """Run totals, written next to the log and read by the comparison."""

    epochs: int
    batches_drawn: int
    gradient_updates: int
    wall_time: float
    epoch_times: List[float]
    mean_epoch_time: float
    stop_reason: str
    final_train_loss: float
    mode: str
    selection_enabled: bool
    seed: int
    feeder_hash: Optional[str] = None
    epoch_losses: List[float] = Field(default_factory=list)


def draw_batches(
    n_train: int,
    batch_size: int,
    epoch: int,
    seed: int,
    alpha: Optional[float] = None,
) -> List[np.ndarray]:
    """
    Shuffle the training indices for one epoch and cut them into batches.

    The permutation depends only on (seed, epoch). A trailing batch that
    cannot carry a CVaR term (fewer than 2 samples, or alpha·|B| < 1 when
    alpha is given) is dropped.

    Args:
        n_train: Size of the training split
        batch_size: Samples per batch
        epoch: Epoch number
        seed: Run seed
        alpha: CVaR level used for the trailing-batch rule

    Returns:
        List of index arrays

    Raises:
        BatchSizeError: If batch_size > n_train
    """
    if batch_size > n_train:
        raise BatchSizeError(
            f"batch_size {batch_size} exceeds the training split ({n_train} samples)"
        )
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(n_train)
    batches = [order[i : i + batch_size] for i in range(0, n_train, batch_size)]
    last = batches[-1]
    too_small = len(last) < 2 or (alpha is not None and alpha * len(last) < 1.0 - 1e-9)
    if too_small and len(batches) > 1:
        logger.debug("Epoch %d: dropping trailing batch of %d samples", epoch, len(last))
        batches.pop()
    return batches


def _theta(params: PolicyParams) -> np.ndarray:
    return np.concatenate(
        [params.to_vector(), [params.beta_q or 0.0, params.beta_v or 0.0]]
    )


def _from_theta(params: PolicyParams, theta: np.ndarray) -> PolicyParams:
    updated = params.with_vector(theta[:-2])
    return updated.with_betas(
        float(theta[-2]) if params.beta_q is not None else None,
        float(theta[-1]) if params.beta_v is not None else None,
    )


def train(
    dataset: Dataset,
    model: FeederModel,
    s: SensitivityPair,
    params_init: PolicyParams,
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[int, TrainLog], None]] = None,
) -> Tuple[PolicyParams, TrainLog]:
    """
    Train a policy on the dataset's training split.

    Feature statistics are taken from the training split and frozen in the
    returned parameters. Training stops when an accepted update moves φ by
    less than cfg.epsilon (2-norm) or after cfg.max_epochs.

    Args:
        dataset: Labeled samples
        model: Feeder the dataset was generated on
        s: Its sensitivity matrices
        params_init: Initial policy
        cfg: Training configuration
        on_epoch: Called after every epoch with (epoch, log so far)

    Returns:
        (trained parameters, training log)

    Raises:
        EmptySplitError: If the training split is empty
        DivergenceError: If the loss exceeds cfg.divergence_limit or is not finite
    """
    if dataset.feeder_ref != model.digest:
        raise FeederMismatchError("Dataset was generated on a different feeder")
    samples = dataset.train
    if not samples:
        raise EmptySplitError("Training split is empty")

    data: SampleBatch = make_batch(samples, model, s, params_init.feature_set)
    mean, std = feature_stats(data.features)
    params = replace(params_init, feat_mean=mean, feat_std=std)

    log = TrainLog()
    state = OptimizerState()
    threshold = 0.0
    started = time.perf_counter()

    for epoch in range(cfg.max_epochs):
        epoch_started = time.perf_counter()
        if cfg.threshold_reset or epoch == 0:
            threshold = 0.0
        batches = draw_batches(len(samples), cfg.batch_size, epoch, cfg.seed, cfg.alpha)
        converged = False

        for batch_id, indices in enumerate(batches):
            batch = data.take(indices)
            gate = batch_cvar(params, batch, cfg, s)
            accepted = (not cfg.selection_enabled) or gate >= threshold
            record = TrainRecord(
                epoch=epoch,
                batch_id=batch_id,
                batch_cvar=gate,
                threshold=threshold,
                accepted=accepted,
                loss_components={},
                param_delta=0.0,
            )
            log.records.append(record)
            log.batches_drawn += 1

            if not accepted:
                logger.debug(
                    "Epoch %d batch %d skipped: CVaR %.6g < threshold %.6g",
                    epoch, batch_id, gate, threshold,
                )
                continue

            if cfg.selection_enabled:
                threshold = gate
            params = initial_betas(params, batch, cfg, s)
            result = combined_loss_grad(params, batch, cfg, s)
            if not np.isfinite(result.loss) or result.loss > cfg.divergence_limit:
                logger.error(
                    "Diverged at epoch %d batch %d: loss %.6g, components %s",
                    epoch, batch_id, result.loss, result.components,
                )
                raise DivergenceError(
                    f"Training diverged at epoch {epoch}, batch {batch_id}: "
                    f"loss {result.loss:.6g} (components {result.components})"
                )

            grads = np.concatenate(
                [result.grads, [result.grad_beta_q, result.grad_beta_v]]
            )
            phi_before = params.to_vector()
            theta, state = optimizer_step(_theta(params), grads, state, cfg)
            params = _from_theta(params, theta)
            delta = float(np.linalg.norm(params.to_vector() - phi_before))

            record.loss_components = dict(result.components, total=result.loss)
            record.param_delta = delta
            log.gradient_updates += 1

            if delta < cfg.epsilon:
                converged = True
                break

        log.epochs = epoch + 1
        log.epoch_times.append(time.perf_counter() - epoch_started)
        log.epoch_losses.append(float(np.mean(prediction_errors(params, data))))
        epoch_records = log.records[-(batch_id + 1) :]
        updates = sum(1 for r in epoch_records if r.accepted)
        logger.info(
            "Epoch %d: %d/%d batches used, train MSE %.6g, %.3fs",
            epoch,
            updates,
            len(epoch_records),
            log.epoch_losses[-1],
            log.epoch_times[-1],
        )
        if on_epoch:
            on_epoch(epoch, log)
        if converged:
            log.stop_reason = "converged"
            break

    log.wall_time = time.perf_counter() - started
    log.final_train_loss = log.epoch_losses[-1]
    return params, log


def summarize(
    log: TrainLog, cfg: TrainConfig, feeder_hash: Optional[str] = None
) -> TrainSummary:
    """Build the JSON summary of a run."""
    return TrainSummary(
        epochs=log.epochs,
        batches_drawn=log.batches_drawn,
        gradient_updates=log.gradient_updates,
        wall_time=log.wall_time,
        epoch_times=log.epoch_times,
        mean_epoch_time=float(np.mean(log.epoch_times)) if log.epoch_times else 0.0,
        stop_reason=log.stop_reason,
        final_train_loss=log.final_train_loss,
        epoch_losses=log.epoch_losses,
        mode=cfg.mode.value,
        selection_enabled=cfg.selection_enabled,
        seed=cfg.seed,
        feeder_hash=feeder_hash,
    )


def write_train_log(log: TrainLog, path: Union[str, Path]) -> Path:
    """Write the per-batch records as JSON lines, atomically."""
    with atomic_write(path) as handle:
        for record in log.records:
            handle.write(json.dumps(asdict(record)) + "\n")
    return Path(path)


def read_train_log(path: Union[str, Path]) -> List[TrainRecord]:
    """Read the records written by write_train_log."""
    with open(path, "r") as f:
        return [TrainRecord(**json.loads(line)) for line in f if line.strip()]


def write_summary(summary: TrainSummary, path: Union[str, Path]) -> Path:
    with atomic_write(path) as handle:
        handle.write(summary.model_dump_json(indent=2))
    return Path(path)


def read_summary(path: Union[str, Path]) -> TrainSummary:
    with open(path, "r") as f:
        return TrainSummary.model_validate_json(f.read())
