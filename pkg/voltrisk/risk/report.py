"""
Risk reports, voltage-risk aggregation and histogram output.
"""

import logging
from pathlib import Path
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from voltrisk.risk.measures import (
    EmptyLossesError,
    Losses,
    as_losses,
    check_alpha,
    cvar_rockafellar,
    var,
)
from voltrisk.utils.io import atomic_write

logger = logging.getLogger(__name__)


class RiskReport(BaseModel):
    """Summary statistics of a loss sample at one α."""

    alpha: float = Field(gt=0.0, le=1.0)
    var: float
    cvar: float
    mean: float
    max: float
    n_samples: int = Field(ge=1)


def risk_report(losses: Losses, alpha: float) -> RiskReport:
    """
    Compute VaR, CVaR, mean and max of a loss sample.

    Args:
        losses: Loss sample
        alpha: Tail probability in (0, 1]

    Returns:
        RiskReport
    """
    values = as_losses(losses)
    alpha = check_alpha(alpha)
    value, _ = cvar_rockafellar(values, alpha)
    return RiskReport(
        alpha=alpha,
        var=var(values, alpha),
        cvar=value,
        mean=float(np.mean(values)),
        max=float(np.max(values)),
        n_samples=int(values.size),
    )


def max_abs_deviation(v_samples: np.ndarray) -> np.ndarray:
    """Per-sample loss max_n |v_n| for a (K, N) array of voltage deviations."""
    v = np.asarray(v_samples, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    if v.size == 0:
        raise EmptyLossesError("No voltage samples")
    return np.max(np.abs(v), axis=1)


def voltage_risk(v_samples: np.ndarray, alpha: float) -> RiskReport:
    """
    Risk of the worst bus deviation per sample.

    Args:
        v_samples: (K, N) voltage deviations, or a single N-vector
        alpha: Tail probability in (0, 1]

    Returns:
        RiskReport of the per-sample max |v|
    """
    return risk_report(max_abs_deviation(v_samples), alpha)


class Histogram(NamedTuple):
    edges: np.ndarray
    counts: np.ndarray


def loss_histogram(
    values: Losses, bins: int = 20, value_range: Optional[Tuple[float, float]] = None
) -> Histogram:
    """Bin edges and counts of a loss sample."""
    data = as_losses(values)
    counts, edges = np.histogram(data, bins=bins, range=value_range)
    return Histogram(edges, counts)


def histogram_frame(histogram: Histogram) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "bin_left": histogram.edges[:-1],
            "bin_right": histogram.edges[1:],
            "count": histogram.counts,
        }
    )


def write_histogram_csv(histogram: Histogram, path: Union[str, Path]) -> Path:
    """Write a histogram as CSV (bin_left, bin_right, count), atomically."""
    with atomic_write(path) as handle:
        histogram_frame(histogram).to_csv(handle, index=False)
    logger.debug("Wrote histogram with %d bins to %s", len(histogram.counts), path)
    return Path(path)
