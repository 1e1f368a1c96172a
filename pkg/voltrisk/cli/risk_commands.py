"""Risk measure CLI commands for voltrisk."""

from pathlib import Path
from typing import Optional

import click
import numpy as np
import pandas as pd

from voltrisk.cli.utils import exit_with_error, format_float, print_success, print_table
from voltrisk.exceptions import VoltRiskError
from voltrisk.risk import RiskError, loss_histogram, risk_report, write_histogram_csv


def read_losses(path: Path, column: Optional[str] = None) -> np.ndarray:
    """
    Read a loss sample from a CSV file.

    The file may or may not have a header row. Without --column the first
    column is used; a column may be given by header name or 0-based position.

    Raises:
        RiskError: If the file is empty or the column is not numeric
    """
    try:
        raw = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True)
    except pd.errors.EmptyDataError as e:
        raise RiskError(f"{path} holds no losses") from e

    has_header = bool(pd.to_numeric(raw.iloc[0], errors="coerce").isna().any())
    frame = pd.read_csv(path) if has_header else raw

    if column is None:
        series = frame.iloc[:, 0]
    elif has_header and column in frame.columns:
        series = frame[column]
    elif column.isdigit() and int(column) < frame.shape[1]:
        series = frame.iloc[:, int(column)]
    else:
        raise RiskError(f"Column '{column}' not found in {path}")

    try:
        return pd.to_numeric(series.dropna(), errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as e:
        raise RiskError(f"Column '{series.name}' of {path} is not numeric") from e


@click.command(name="risk")
@click.argument("losses_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha", type=float, default=0.2, show_default=True, help="Tail probability")
@click.option("--column", default=None, help="Column name or position (default: first)")
@click.option(
    "--histogram", "histogram_path", type=click.Path(dir_okay=False), default=None,
    help="Also write a histogram CSV",
)
@click.option("--bins", type=int, default=20, show_default=True, help="Histogram bins")
def risk(losses_csv, alpha, column, histogram_path, bins):
    """Compute VaR and CVaR of a loss sample."""
    try:
        losses = read_losses(Path(losses_csv), column)
        report = risk_report(losses, alpha)
        if histogram_path:
            write_histogram_csv(loss_histogram(losses, bins), histogram_path)
    except VoltRiskError as e:
        exit_with_error(f"Error: {str(e)}")

    print_table(
        ["alpha", "VaR", "CVaR", "Mean", "Max", "Samples"],
        [[
            format_float(report.alpha),
            format_float(report.var, 10),
            format_float(report.cvar, 10),
            format_float(report.mean, 10),
            format_float(report.max, 10),
            report.n_samples,
        ]],
    )
    if histogram_path:
        print_success(f"Wrote {histogram_path}")
