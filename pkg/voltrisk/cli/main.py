"""
Main CLI entry point for voltrisk.

This module provides the main command-line interface for the application.
"""

import sys

import click

from voltrisk import __version__
from voltrisk.cli.data_commands import feeders, gen_data, solve_opf
from voltrisk.cli.risk_commands import risk
from voltrisk.cli.train_commands import (
    compare,
    eval_model,
    run_experiment_command,
    train_model,
)
from voltrisk.cli.utils import print_error, setup_logging
from voltrisk.config import get_config


@click.group()
@click.version_option(version=__version__, prog_name="voltrisk")
@click.option("--verbose", "-v", count=True, help="More log output (-v info, -vv debug)")
def cli(verbose):
    """voltrisk - risk-aware learning of decentralized inverter dispatch."""
    setup_logging(verbose, get_config().log_level)


# Register commands
cli.add_command(gen_data)
cli.add_command(solve_opf)
cli.add_command(feeders)
cli.add_command(train_model)
cli.add_command(eval_model)
cli.add_command(compare)
cli.add_command(run_experiment_command)
cli.add_command(risk)


def main():
    """Entry point for the CLI."""
    try:
        cli()
    except Exception as e:
        print_error(f"Error: {str(e)}")
        sys.exit(1)


if __name__ == "__main__":
    main()
