"""
Labeled dataset generation and the JSON-lines dataset file.

The file starts with one header object, followed by one sample per line::

    {"kind": "voltrisk-dataset", "feeder_hash": ..., "split_index": ..., ...}
    {"t": 0, "y": {"pg": [...], "pc": [...], "qc": [...]}, "z": [...],
     "objective": ..., "status": "optimal", "kkt_residual": ..., "slack_used": ...}
"""

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, List, Optional, Union

import numpy as np

from voltrisk.config import get_config
from voltrisk.feeder.models import FeederModel, SensitivityPair
from voltrisk.feeder.network import build_sensitivities
from voltrisk.opf.models import (
    AllSamplesInfeasibleError,
    Dataset,
    DatasetError,
    DatasetSample,
    FeederMismatchError,
    OperatingCondition,
    OpfSolution,
    SolveStatus,
)
from voltrisk.opf.solver import NotPositiveDefiniteError, SolverError, solve_lcqp
from voltrisk.utils.io import atomic_write

logger = logging.getLogger(__name__)

DATASET_KIND = "voltrisk-dataset"
DATASET_VERSION = 1


def _solve_sample(
    model: FeederModel,
    s: SensitivityPair,
    tol: float,
    soften: bool,
    oc: OperatingCondition,
) -> Optional[OpfSolution]:
    try:
        solution = solve_lcqp(oc, s, model, tol=tol, soften=soften)
    except NotPositiveDefiniteError:
        raise
    except SolverError as e:
        logger.warning("Sample %d dropped: %s", oc.timestamp, e)
        return None
    if solution.status == SolveStatus.INFEASIBLE:
        return None
    return solution


def generate_dataset(
    model: FeederModel,
    profiles: List[OperatingCondition],
    tol: Optional[float] = None,
    train_fraction: float = 0.8,
    workers: Optional[int] = None,
    soften: bool = True,
    on_progress: Optional[Callable[[int], None]] = None,
) -> Dataset:
    """
    Solve the LCQP for every profile and split the result chronologically.

    Samples that stay infeasible (soften=False) or whose solve fails (iteration
    cap, failed phase-one LP) are dropped and counted. A resistance matrix
    that is not positive definite fails the whole run. Results are assembled in profile order whatever the
    worker count.

    Args:
        model: Feeder
        profiles: Chronologically ordered operating conditions
        tol: Solver tolerance, defaults to the configured one
        train_fraction: Share of samples in the training split
        workers: Process count, defaults to VOLTRISK_WORKERS
        soften: Passed through to solve_lcqp
        on_progress: Called with the number of finished samples

    Returns:
        Dataset with split_index = floor(train_fraction · K)

    Raises:
        AllSamplesInfeasibleError: If nothing survives
        DatasetError: If the split would leave a side empty
        NotPositiveDefiniteError: If the feeder's R is not positive definite
    """
    if not profiles:
        raise DatasetError("No operating conditions to solve")
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError(f"train_fraction must lie in (0, 1), got {train_fraction}")

    config = get_config()
    tol = config.solver_tol if tol is None else tol
    workers = config.workers if workers is None else workers

    der_mask = np.zeros(model.n_buses, dtype=bool)
    der_mask[model.der_indices] = True
    for oc in profiles:
        oc.check_support(der_mask)

    s = build_sensitivities(model)
    solve = partial(_solve_sample, model, s, tol, soften)

    solutions: List[Optional[OpfSolution]] = []
    if workers > 1:
        chunksize = max(1, len(profiles) // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for solution in pool.map(solve, profiles, chunksize=chunksize):
                solutions.append(solution)
                if on_progress:
                    on_progress(len(solutions))
    else:
        for oc in profiles:
            solutions.append(solve(oc))
            if on_progress:
                on_progress(len(solutions))

    samples = [
        DatasetSample(oc, solution)
        for oc, solution in zip(profiles, solutions)
        if solution is not None
    ]
    dropped = len(profiles) - len(samples)
    softened = sum(1 for sample in samples if sample.solution.status == SolveStatus.SOFTENED)
    if dropped:
        logger.warning("Dropped %d of %d samples", dropped, len(profiles))
    if softened:
        logger.info("Softened voltage limits on %d samples", softened)
    if not samples:
        raise AllSamplesInfeasibleError(
            f"All {len(profiles)} samples were infeasible or failed to solve"
        )

    split_index = math.floor(train_fraction * len(samples))
    if not 0 < split_index < len(samples):
        raise DatasetError(
            f"{len(samples)} samples cannot be split with train_fraction {train_fraction}"
        )

    return Dataset(
        samples=samples,
        feeder_ref=model.digest,
        split_index=split_index,
        bus_order=model.bus_ids,
        metadata={
            "n_generated": len(profiles),
            "dropped": dropped,
            "softened": softened,
            "train_fraction": train_fraction,
            "tol": tol,
        },
    )


def write_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write a dataset as JSON lines, atomically."""
    header = {
        "kind": DATASET_KIND,
        "version": DATASET_VERSION,
        "feeder_hash": dataset.feeder_ref,
        "split_index": dataset.split_index,
        "n_samples": len(dataset),
        "bus_order": list(dataset.bus_order),
        "metadata": dataset.metadata,
    }
    with atomic_write(path) as handle:
        handle.write(json.dumps(header) + "\n")
        for sample in dataset.samples:
            record = {"t": sample.condition.timestamp, "y": sample.condition.to_dict()}
            record.update(sample.solution.to_dict())
            handle.write(json.dumps(record) + "\n")
    return Path(path)


def read_dataset(path: Union[str, Path], model: Optional[FeederModel] = None) -> Dataset:
    """
    Read a JSON-lines dataset.

    Args:
        path: Dataset file
        model: If given, the dataset must have been generated on this feeder

    Returns:
        Dataset

    Raises:
        DatasetError: If the file is malformed
        FeederMismatchError: If the feeder hash differs from model.digest
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"Dataset file not found: {path}")

    with open(path, "r") as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise DatasetError(f"Dataset file {path} is empty")

    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as e:
        raise DatasetError(f"Invalid JSON in dataset {path}: {e}") from e

    if header.get("kind") != DATASET_KIND:
        raise DatasetError(f"{path} is not a voltrisk dataset")
    if model is not None and header["feeder_hash"] != model.digest:
        raise FeederMismatchError(
            f"Dataset {path} was generated on a different feeder "
            f"({header['feeder_hash'][:12]} vs {model.digest[:12]})"
        )

    samples = []
    for record in records:
        condition = OperatingCondition.from_dict(record["y"], timestamp=int(record["t"]))
        solution = OpfSolution(
            q_gen=np.array(record["z"], dtype=float),
            objective=float(record["objective"]),
            kkt_residual=float(record.get("kkt_residual", 0.0)),
            status=SolveStatus(record["status"]),
            slack_used=float(record.get("slack_used", 0.0)),
        )
        samples.append(DatasetSample(condition, solution))

    if len(samples) != header.get("n_samples", len(samples)):
        raise DatasetError(
            f"Dataset {path} declares {header['n_samples']} samples but holds {len(samples)}"
        )

    return Dataset(
        samples=samples,
        feeder_ref=header["feeder_hash"],
        split_index=int(header["split_index"]),
        bus_order=tuple(header.get("bus_order", ())),
        metadata=header.get("metadata", {}),
    )
