"""Training, evaluation and comparison CLI commands for voltrisk."""

import json
from pathlib import Path
from typing import Any, Dict, List, Tuple

import click
from pydantic import ValidationError

from voltrisk.cli.experiment import (
    PRESET_ARMS,
    evaluate_models,
    load_experiment,
    preset_experiment,
    run_experiment,
    train_arm,
)
from voltrisk.cli.utils import (
    exit_with_error,
    format_float,
    mode_option,
    parse_int_list,
    print_info,
    print_mapping,
    print_section_header,
    print_success,
    print_table,
    print_warning,
)
from voltrisk.config import get_config
from voltrisk.exceptions import VoltRiskError
from voltrisk.export.comparison import (
    Comparison,
    artifact_paths,
    build_comparison,
    write_comparison,
)
from voltrisk.feeder import build_sensitivities, resolve_feeder
from voltrisk.opf import ProfileConfig, read_dataset
from voltrisk.trainer import DivergenceError, TrainConfig
from voltrisk.utils.io import atomic_write


def _train_config(**settings: Any) -> TrainConfig:
    """Build a TrainConfig from the options that were given; bad values are usage errors."""
    given = {key: value for key, value in settings.items() if value is not None}
    try:
        return TrainConfig(**given)
    except ValidationError as e:
        raise click.UsageError(str(e)) from e


def train_options(func):
    """Options shared by every command that trains, mirroring TrainConfig."""
    options = [
        click.option("--alpha", type=float, default=None, help="CVaR tail probability [0.2]"),
        click.option("--lambda-q", type=float, default=None, help="Weight of CVaR(qg) [1.0]"),
        click.option("--lambda-v", type=float, default=None, help="Weight of CVaR(dv) [1.0]"),
        click.option("--mse-weight", type=float, default=None, help="Weight of the MSE [1.0]"),
        click.option("--eta", type=float, default=None, help="Learning rate [1e-3]"),
        click.option("--batch-size", type=int, default=None, help="Mini-batch size [64]"),
        click.option("--epsilon", type=float, default=None, help="Stopping threshold [1e-6]"),
        click.option("--max-epochs", type=int, default=None, help="Epoch cap [200]"),
        click.option(
            "--optimizer",
            type=click.Choice(["sgd", "adam", "adaptive-moments"], case_sensitive=False),
            default=None,
            help="Update rule [sgd]",
        ),
        click.option("--tau", type=float, default=None, help="CVaR smoothing [1e-2]"),
        click.option("--voltage-tau", type=float, default=None, help="Smooth-max temperature"),
        click.option("--hidden", default=None, help="Hidden widths, e.g. 32,32"),
        click.option(
            "--feature-set", type=click.Choice(["broadcast", "local"]), default=None,
            help="Policy inputs [broadcast]",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _settings(kwargs: Dict[str, Any]) -> Dict[str, Any]:
    hidden = kwargs.pop("hidden", None)
    if hidden:
        kwargs["hidden_widths"] = parse_int_list(hidden)
    return kwargs


def print_comparison(comparison: Comparison) -> None:
    """Show a comparison as a table."""
    rows = []
    for row in comparison.rows:
        updates = "n/a"
        if row.gradient_updates is not None:
            updates = f"{row.gradient_updates}/{row.batches_drawn}"
        rows.append([
            row.arm,
            format_float(row.epoch_time, 4),
            format_float(row.total_time, 4),
            updates,
            format_float(row.qg_error_pct, 4),
            format_float(row.max_abs_v, 5),
            row.n_violating_samples,
            format_float(row.cvar_v, 5),
        ])
    optimal = comparison.optimal
    rows.append([
        "optimal", "", "", "", "",
        format_float(optimal.max_abs_v, 5), optimal.n_violating_samples,
        format_float(optimal.risk.cvar, 5),
    ])
    print_table(
        ["Loss obj.", "Epoch [s]", "Total [s]", "Updates", "qg error [%]",
         "Max |v|", "Violating", f"CVaR |v| ({comparison.alpha})"],
        rows,
        title=f"{comparison.feeder_name}: {comparison.n_test} test samples",
    )


@click.command(name="train")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(dir_okay=False))
@click.option("--feeder", required=True, help="Feeder the dataset was generated on")
@click.option(
    "--mode", default="mse", show_default=True, callback=mode_option,
    help="mse, cvar_q or cvar_qv (also MSE, CVaR(qg), CVaR(qg,dv))",
)
@click.option("--selection/--no-selection", default=False, help="CVaR mini-batch selection")
@click.option(
    "--threshold-reset/--no-threshold-reset", default=True,
    help="Reset the CVaR threshold every epoch",
)
@click.option("--seed", type=int, default=0, show_default=True, help="Run seed")
@click.option(
    "--output", "-o", "model_path", type=click.Path(dir_okay=False), default=None,
    help="Model file (default: <VOLTRISK_OUTPUT_DIR>/model.json)",
)
@train_options
def train_model(dataset_path, feeder, mode, selection, threshold_reset, seed, model_path, **kwargs):
    """Train one policy on a dataset."""
    cfg = _train_config(
        mode=mode,
        selection_enabled=selection,
        threshold_reset=threshold_reset,
        seed=seed,
        **_settings(kwargs),
    )
    path = Path(model_path or Path(get_config().output_dir) / "model.json")

    try:
        model = resolve_feeder(feeder)
        s = build_sensitivities(model)
        dataset = read_dataset(dataset_path, model)
        print_info(
            f"Training {cfg.mode.label}{' with selection' if selection else ''} "
            f"on {len(dataset.train)} samples"
        )
        _, log, summary = train_arm(dataset, model, s, cfg, cfg.seed, path)
    except DivergenceError as e:
        exit_with_error(f"Training diverged: {str(e)}")
    except VoltRiskError as e:
        exit_with_error(f"Error: {str(e)}")

    skipped = log.batches_drawn - log.gradient_updates
    print_mapping(
        {
            "epochs": summary.epochs,
            "gradient_updates": summary.gradient_updates,
            "batches_drawn": summary.batches_drawn,
            "skipped_batches": skipped,
            "mean_epoch_time": summary.mean_epoch_time,
            "wall_time": summary.wall_time,
            "stop_reason": summary.stop_reason,
            "final_train_loss": summary.final_train_loss,
        },
        title="Training",
    )
    if summary.stop_reason != "converged":
        print_warning(f"Stopped after max_epochs={cfg.max_epochs} without converging")
    log_path, summary_path = artifact_paths(path)
    print_success(f"Wrote {path}, {log_path} and {summary_path}")


@click.command(name="eval")
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(dir_okay=False))
@click.option("--feeder", required=True, help="Feeder the dataset was generated on")
@click.option("--alpha", type=float, default=0.2, show_default=True, help="Risk level")
@click.option("--split", type=click.Choice(["test", "train"]), default="test", show_default=True)
@click.option("--no-clamp", is_flag=True, help="Do not clamp predictions to inverter limits")
@click.option(
    "--output", "-o", "report_path", type=click.Path(dir_okay=False), default=None,
    help="Also write the report as JSON",
)
def eval_model(model_path, dataset_path, feeder, alpha, split, no_clamp, report_path):
    """Evaluate a trained policy on a dataset split."""
    try:
        model = resolve_feeder(feeder)
        s = build_sensitivities(model)
        dataset = read_dataset(dataset_path, model)
        (result,) = evaluate_models(
            [(Path(model_path).stem, model_path)], dataset, model, s, alpha, split,
            clamp=not no_clamp,
        )
    except VoltRiskError as e:
        exit_with_error(f"Error: {str(e)}")

    report = result.report
    print_section_header(f"{result.mode_label or result.name} on the {split} split")
    print_table(
        ["Dispatch", "Max |v|", "Violating samples", "Violations", "VaR |v|", "CVaR |v|"],
        [
            [
                name,
                format_float(stats.max_abs_v, 5),
                stats.n_violating_samples,
                stats.n_violations,
                format_float(stats.risk.var, 5),
                format_float(stats.risk.cvar, 5),
            ]
            for name, stats in (("policy", report.predicted), ("optimal", report.optimal))
        ],
    )
    print_table(
        ["Bus", "Error mean", "Error std"],
        [
            [bus, format_float(mean, 4), format_float(std, 4)]
            for bus, mean, std in zip(
                report.der_buses, report.per_node_error_mean, report.per_node_error_std
            )
        ],
        title=f"qg error {format_float(report.qg_error_pct, 4)}%",
    )
    if report_path:
        with atomic_write(report_path) as handle:
            handle.write(report.model_dump_json(indent=2))
        print_success(f"Wrote {report_path}")


def _parse_arms(arms: Tuple[str, ...]) -> List[Tuple[str, str]]:
    parsed = []
    for arm in arms:
        name, sep, path = arm.partition("=")
        parsed.append((name, path) if sep else (Path(arm).stem, arm))
    return parsed


@click.command(name="compare")
@click.argument("arms", nargs=-1, required=True)
@click.option("--dataset", "dataset_path", required=True, type=click.Path(dir_okay=False))
@click.option("--feeder", required=True, help="Feeder the dataset was generated on")
@click.option("--alpha", type=float, default=0.2, show_default=True, help="Risk level")
@click.option("--bins", type=int, default=30, show_default=True, help="Histogram bins")
@click.option(
    "--output-dir", "-o", type=click.Path(file_okay=False), default=None,
    help="Output directory (default: VOLTRISK_OUTPUT_DIR)",
)
def compare(arms, dataset_path, feeder, alpha, bins, output_dir):
    """
    Compare trained arms on the test split.

    ARMS are model files, optionally named as NAME=PATH.
    """
    out = Path(output_dir or get_config().output_dir)
    try:
        model = resolve_feeder(feeder)
        s = build_sensitivities(model)
        dataset = read_dataset(dataset_path, model)
        results = evaluate_models(_parse_arms(arms), dataset, model, s, alpha)
        comparison = build_comparison(results, model)
        written = write_comparison(comparison, results, out, bins=bins)
    except VoltRiskError as e:
        exit_with_error(f"Error: {str(e)}")

    print_comparison(comparison)
    print_success(f"Wrote {len(written)} files to {out}")


@click.command(name="run-experiment")
@click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
    help="Experiment JSON file",
)
@click.option(
    "--preset", type=click.Choice(sorted(PRESET_ARMS)), default=None,
    help="Built-in arm set: prediction (MSE vs CVaR(qg)) or voltage (MSE vs CVaR(qg,dv))",
)
@click.option("--feeder", default="radial25", show_default=True, help="Feeder for presets")
@click.option("--days", type=int, default=None, help="Days of synthetic profiles for presets")
@click.option("--seed", type=int, default=None, help="Run seed (overrides the file)")
@click.option(
    "--output-dir", "-o", type=click.Path(file_okay=False), default=None,
    help="Output directory (default: VOLTRISK_OUTPUT_DIR)",
)
@train_options
def run_experiment_command(config_path, preset, feeder, days, seed, output_dir, **kwargs):
    """Generate data, train every arm and compare them."""
    if bool(config_path) == bool(preset):
        raise click.UsageError("Give exactly one of --config or --preset")

    try:
        if config_path:
            config = load_experiment(config_path)
            overrides = _settings({k: v for k, v in kwargs.items() if v is not None})
            if overrides:
                merged = {**config.train.model_dump(), **overrides}
                config = config.model_copy(update={"train": _train_config(**merged)})
            if seed is not None:
                config = config.model_copy(update={"seed": seed})
        else:
            settings: Dict[str, Any] = {"train": _train_config(**_settings(kwargs))}
            if days is not None:
                settings["profiles"] = ProfileConfig(days=days)
            if seed is not None:
                settings["seed"] = seed
            config = preset_experiment(preset, feeder, **settings)
    except ValidationError as e:
        raise click.UsageError(str(e)) from e
    except (OSError, json.JSONDecodeError) as e:
        exit_with_error(f"Error: cannot read {config_path}: {str(e)}")

    try:
        comparison, _ = run_experiment(config, output_dir, on_message=print_info)
    except DivergenceError as e:
        exit_with_error(f"Training diverged: {str(e)}")
    except VoltRiskError as e:
        exit_with_error(f"Error: {str(e)}")

    print_comparison(comparison)
    out = output_dir or config.output_dir or get_config().output_dir
    print_success(f"Experiment written to {out}")
