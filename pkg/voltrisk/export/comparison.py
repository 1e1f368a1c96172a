"""
Side-by-side comparison of trained arms.

Produces the table of epoch time, total time, gradient updates, qg error,
max |v|, violation counts and voltage CVaR, plus the CSV files behind the
per-node error bars and the deviation histograms.
"""

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from voltrisk.exceptions import VoltRiskError
from voltrisk.export.templates import render_template
from voltrisk.feeder.models import FeederModel
from voltrisk.opf.models import FeederMismatchError
from voltrisk.risk.report import loss_histogram, write_histogram_csv
from voltrisk.trainer.evaluate import EvalReport, VoltageStats
from voltrisk.trainer.loop import TrainSummary
from voltrisk.utils.io import atomic_write

logger = logging.getLogger(__name__)

REPORT_TEMPLATE = "comparison_report.md.j2"


class ComparisonError(VoltRiskError):
    """Arms cannot be compared."""

    pass


def slugify(name: str) -> str:
    """File-name-safe form of an arm name, e.g. 'CVaR(qg)+Sel' -> 'cvar_qg_sel'."""
    slug = re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower()
    return slug or "arm"


def artifact_paths(model_path: Union[str, Path]) -> Tuple[Path, Path]:
    """Training log and summary paths that belong to a model file."""
    model_path = Path(model_path)
    stem = model_path.with_suffix("")
    return Path(f"{stem}.log.jsonl"), Path(f"{stem}.summary.json")


@dataclass
class ArmResult:
    """Evaluation (and, when available, training totals) of one arm."""

    name: str
    report: EvalReport
    summary: Optional[TrainSummary] = None
    mode_label: Optional[str] = None


class ComparisonRow(BaseModel):
    arm: str
    mode: Optional[str] = None
    selection_enabled: Optional[bool] = None
    epochs: Optional[int] = None
    epoch_time: Optional[float] = None
    total_time: Optional[float] = None
    gradient_updates: Optional[int] = None
    batches_drawn: Optional[int] = None
    stop_reason: Optional[str] = None
    qg_error_pct: Optional[float]
    max_abs_v: float
    n_violating_samples: int
    n_violations: int
    var_v: float
    cvar_v: float


class Comparison(BaseModel):
    """Everything written to comparison.json."""

    feeder_name: str
    feeder_hash: str
    alpha: float
    n_test: int
    v_bounds: Tuple[float, float]
    rows: List[ComparisonRow]
    optimal: VoltageStats


def check_feeder_hashes(hashes: Dict[str, Optional[str]], expected: str) -> None:
    """
    Require every arm to have been trained on the expected feeder.

    Args:
        hashes: Arm name -> feeder hash recorded in its model file
        expected: Digest of the feeder used for evaluation

    Raises:
        FeederMismatchError: On the first arm whose hash differs
    """
    for name, digest in hashes.items():
        if digest is None:
            logger.warning("Model for arm '%s' records no feeder hash", name)
            continue
        if digest != expected:
            raise FeederMismatchError(
                f"Arm '{name}' was trained on feeder {digest[:12]}, "
                f"expected {expected[:12]}"
            )


def _row(arm: ArmResult) -> ComparisonRow:
    stats = arm.report.predicted
    summary = arm.summary
    return ComparisonRow(
        arm=arm.name,
        mode=arm.mode_label or (summary.mode if summary else None),
        selection_enabled=summary.selection_enabled if summary else None,
        epochs=summary.epochs if summary else None,
        epoch_time=summary.mean_epoch_time if summary else None,
        total_time=summary.wall_time if summary else None,
        gradient_updates=summary.gradient_updates if summary else None,
        batches_drawn=summary.batches_drawn if summary else None,
        stop_reason=summary.stop_reason if summary else None,
        qg_error_pct=arm.report.qg_error_pct,
        max_abs_v=stats.max_abs_v,
        n_violating_samples=stats.n_violating_samples,
        n_violations=stats.n_violations,
        var_v=stats.risk.var,
        cvar_v=stats.risk.cvar,
    )


def build_comparison(arms: Sequence[ArmResult], model: FeederModel) -> Comparison:
    """
    Assemble the comparison table.

    Args:
        arms: Evaluated arms, all on the same split and α
        model: Feeder they were evaluated on

    Returns:
        Comparison

    Raises:
        ComparisonError: If there are no arms, names collide or the arms
            were evaluated on different splits
    """
    if not arms:
        raise ComparisonError("Nothing to compare")
    slugs = [slugify(arm.name) for arm in arms]
    if len(set(slugs)) != len(slugs) or "optimal" in slugs:
        raise ComparisonError(
            f"Arm names must be unique and not 'optimal': {[arm.name for arm in arms]}"
        )
    first = arms[0].report
    for arm in arms[1:]:
        if arm.report.n_samples != first.n_samples or arm.report.alpha != first.alpha:
            raise ComparisonError(
                f"Arm '{arm.name}' was evaluated on a different split or alpha"
            )
    return Comparison(
        feeder_name=model.name,
        feeder_hash=model.digest,
        alpha=first.alpha,
        n_test=first.n_samples,
        v_bounds=model.v_bounds,
        rows=[_row(arm) for arm in arms],
        optimal=first.optimal,
    )


def per_node_error_frame(report: EvalReport) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "bus": report.der_buses,
            "error_mean": report.per_node_error_mean,
            "error_std": report.per_node_error_std,
        }
    )


def render_markdown(comparison: Comparison) -> str:
    return render_template(REPORT_TEMPLATE, comparison=comparison)


def write_comparison(
    comparison: Comparison,
    arms: Sequence[ArmResult],
    output_dir: Union[str, Path],
    bins: int = 30,
) -> List[Path]:
    """
    Write comparison.json, comparison.md and the per-arm CSV files.

    Histograms of every arm and of the optimal dispatch share one set of
    bin edges so they can be overlaid.

    Returns:
        Paths written, in order
    """
    output_dir = Path(output_dir)
    written: List[Path] = []

    path = output_dir / "comparison.json"
    with atomic_write(path) as handle:
        json.dump(comparison.model_dump(mode="json"), handle, indent=2)
    written.append(path)

    path = output_dir / "comparison.md"
    with atomic_write(path) as handle:
        handle.write(render_markdown(comparison))
    written.append(path)

    pooled = np.concatenate(
        [np.asarray(arm.report.predicted.max_deviation) for arm in arms]
        + [np.asarray(comparison.optimal.max_deviation)]
    )
    value_range = (0.0, float(pooled.max()) if pooled.max() > 0.0 else 1.0)

    written.append(
        write_histogram_csv(
            loss_histogram(comparison.optimal.max_deviation, bins, value_range),
            output_dir / "histogram_optimal.csv",
        )
    )
    for arm in arms:
        slug = slugify(arm.name)
        histogram = loss_histogram(arm.report.predicted.max_deviation, bins, value_range)
        written.append(write_histogram_csv(histogram, output_dir / f"histogram_{slug}.csv"))

        path = output_dir / f"per_node_error_{slug}.csv"
        with atomic_write(path) as handle:
            per_node_error_frame(arm.report).to_csv(handle, index=False)
        written.append(path)

    logger.info("Wrote %d comparison files to %s", len(written), output_dir)
    return written
