"""
CLI utility functions for voltrisk.

This module provides helper functions for formatting CLI output,
displaying tables, logging setup and option parsing.
"""

import logging
import sys
from typing import Any, Dict, List, NoReturn, Optional, Sequence

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from voltrisk.nn.losses import LossMode, parse_mode
from voltrisk.nn.policy import InvalidModeError

# Create console for rich output
console = Console()

# Log records go to stderr
log_console = Console(stderr=True)

LOG_LEVELS = ["WARNING", "INFO", "DEBUG"]


def print_success(message: str) -> None:
    """
    Print a success message with green color.

    Args:
        message: The message to print
    """
    console.print(f"[bold green]✓[/bold green] {message}")


def print_error(message: str) -> None:
    """
    Print an error message with red color.

    Args:
        message: The message to print
    """
    console.print(f"[bold red]✗[/bold red] {message}")


def print_warning(message: str) -> None:
    """
    Print a warning message with yellow color.

    Args:
        message: The message to print
    """
    console.print(f"[bold yellow]![/bold yellow] {message}")


def print_info(message: str) -> None:
    """
    Print an info message with blue color.

    Args:
        message: The message to print
    """
    console.print(f"[bold blue]i[/bold blue] {message}")


def format_float(value: Optional[float], digits: int = 6) -> str:
    """
    Format an optional float for a table cell.

    Args:
        value: The number, or None
        digits: Significant digits

    Returns:
        Formatted string, "n/a" for None
    """
    if value is None:
        return "n/a"
    return f"{value:.{digits}g}"


def print_table(
    columns: List[str],
    data: List[List[Any]],
    title: Optional[str] = None,
    caption: Optional[str] = None,
) -> None:
    """
    Print a formatted table.

    Args:
        columns: List of column names
        data: List of rows, where each row is a list of values
        title: Optional title for the table
        caption: Optional caption for the table
    """
    table = Table(title=title, caption=caption)

    for column in columns:
        table.add_column(column)

    for row in data:
        str_row = [str(cell) if cell is not None else "" for cell in row]
        table.add_row(*str_row)

    console.print(table)


def print_mapping(values: Dict[str, Any], title: Optional[str] = None) -> None:
    """
    Print key/value pairs in a panel.

    Args:
        values: Mapping to show, in insertion order
        title: Optional title for the panel
    """
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            value = format_float(value)
        lines.append(f"{key.replace('_', ' ')}: {value}")
    console.print(Panel("\n".join(lines), title=title))


def print_section_header(title: str) -> None:
    """
    Print a section header with a horizontal rule.

    Args:
        title: The section title
    """
    console.print(f"\n[bold]{title}[/bold]")
    console.print("=" * 80)


def exit_with_error(message: str, code: int = 1) -> NoReturn:
    """
    Print an error message and exit with the given code.

    Args:
        message: The error message
        code: Exit code
    """
    print_error(message)
    sys.exit(code)


def setup_logging(verbosity: int, default_level: str = "WARNING") -> None:
    """
    Route library logging through rich.

    Args:
        verbosity: Number of -v flags; 0 keeps default_level
        default_level: Level used without -v (VOLTRISK_LOG_LEVEL)
    """
    if verbosity > 0:
        level = LOG_LEVELS[min(verbosity, len(LOG_LEVELS) - 1)]
    else:
        level = default_level
    root = logging.getLogger("voltrisk")
    root.handlers = [RichHandler(console=log_console, show_path=False, rich_tracebacks=False)]
    root.setLevel(level)


def mode_option(
    ctx: click.Context, param: click.Parameter, value: Optional[str]
) -> Optional[LossMode]:
    """Click callback turning a mode string into a LossMode (usage error if unknown)."""
    if value is None:
        return None
    try:
        return parse_mode(value)
    except InvalidModeError as e:
        raise click.BadParameter(str(e)) from e


def parse_float_list(text: Optional[str], length: int, name: str) -> List[float]:
    """
    Parse a comma-separated vector; an empty or missing value means zeros.

    Raises:
        click.BadParameter: If an entry is not a number or the length is wrong
    """
    if not text:
        return [0.0] * length
    try:
        values = [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise click.BadParameter(f"{name} must be comma-separated numbers") from e
    if len(values) != length:
        raise click.BadParameter(
            f"{name} has {len(values)} entries, the feeder has {length} buses"
        )
    return values


def parse_int_list(text: str) -> Sequence[int]:
    """Parse '32,32' into (32, 32)."""
    try:
        return tuple(int(item) for item in text.split(",") if item.strip())
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated integers, got '{text}'") from e
