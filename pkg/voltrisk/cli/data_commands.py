"""Dataset and dispatch CLI commands for voltrisk."""

import json
from pathlib import Path

import click
import numpy as np
from pydantic import ValidationError

from voltrisk.cli.experiment import build_profiles
from voltrisk.cli.utils import (
    exit_with_error,
    format_float,
    parse_float_list,
    print_info,
    print_mapping,
    print_section_header,
    print_success,
    print_table,
    print_warning,
)
from voltrisk.config import get_config
from voltrisk.exceptions import VoltRiskError
from voltrisk.feeder import (
    build_sensitivities,
    find_feeder_file,
    list_available_feeders,
    load_feeder,
    resolve_feeder,
    tree_depths,
)
from voltrisk.opf import (
    OperatingCondition,
    ProfileConfig,
    SolveStatus,
    generate_dataset,
    kkt_residuals,
    read_profiles,
    solve_lcqp,
    write_dataset,
    write_profiles,
)


@click.command(name="gen-data")
@click.option("--feeder", required=True, help="Feeder file, or the name of a known feeder")
@click.option("--days", type=int, default=10, show_default=True, help="Days of profiles")
@click.option(
    "--minutes-per-sample", type=int, default=1, show_default=True, help="Sample spacing"
)
@click.option("--seed", type=int, default=0, show_default=True, help="Run seed")
@click.option("--noise", type=float, default=0.1, show_default=True, help="Relative noise")
@click.option("--pv-buses", default=None, help="Comma-separated PV buses (default: DER buses)")
@click.option(
    "--profiles",
    "profiles_csv",
    type=click.Path(dir_okay=False),
    default=None,
    help="Read operating conditions from a profile CSV instead of synthesizing",
)
@click.option("--train-fraction", type=float, default=0.8, show_default=True)
@click.option("--tol", type=float, default=None, help="Solver tolerance")
@click.option("--workers", type=int, default=None, help="Parallel solver processes")
@click.option("--no-soften", is_flag=True, help="Drop infeasible samples instead of softening")
@click.option(
    "--output-dir", "-o", type=click.Path(file_okay=False), default=None,
    help="Output directory (default: VOLTRISK_OUTPUT_DIR)",
)
def gen_data(
    feeder,
    days,
    minutes_per_sample,
    seed,
    noise,
    pv_buses,
    profiles_csv,
    train_fraction,
    tol,
    workers,
    no_soften,
    output_dir,
):
    """Synthesize operating conditions and solve the dispatch for each."""
    out = Path(output_dir or get_config().output_dir)
    try:
        profile_config = ProfileConfig(
            days=days,
            minutes_per_sample=minutes_per_sample,
            noise=noise,
            pv_buses=[bus.strip() for bus in pv_buses.split(",")] if pv_buses else None,
        )
    except ValidationError as e:
        raise click.UsageError(str(e)) from e

    try:
        model = resolve_feeder(feeder)
        profiles = build_profiles(model, profile_config, seed, profiles_csv)
        print_info(f"Solving {len(profiles)} operating conditions on {model.name}")
        dataset = generate_dataset(
            model,
            profiles,
            tol=tol,
            train_fraction=train_fraction,
            workers=workers,
            soften=not no_soften,
        )
        profiles_path = write_profiles(profiles, model, out / "profiles.csv")
        dataset_path = write_dataset(dataset, out / "dataset.jsonl")
    except VoltRiskError as e:
        exit_with_error(f"Error: {str(e)}")

    counts = dataset.status_counts()
    dropped = dataset.metadata.get("dropped", 0)
    print_table(
        ["Samples", "Train", "Test", "Optimal", "Softened", "Dropped"],
        [[
            len(dataset), len(dataset.train), len(dataset.test),
            counts[SolveStatus.OPTIMAL.value], counts[SolveStatus.SOFTENED.value], dropped,
        ]],
        title=f"Dataset on {model.name}",
    )
    if dropped:
        print_warning(f"{dropped} samples could not be solved and were dropped")
    print_success(f"Wrote {profiles_path} and {dataset_path}")


def _condition_from_options(model, pg, pc, qc, profiles_csv, index) -> OperatingCondition:
    if profiles_csv:
        profiles = read_profiles(profiles_csv, model)
        if not 0 <= index < len(profiles):
            raise click.BadParameter(
                f"--index {index} is outside the {len(profiles)} profiles", param_hint="--index"
            )
        return profiles[index]
    n = model.n_buses
    return OperatingCondition(
        p_gen=np.array(parse_float_list(pg, n, "--pg")),
        p_load=np.array(parse_float_list(pc, n, "--pc")),
        q_load=np.array(parse_float_list(qc, n, "--qc")),
    )


@click.command(name="solve-opf")
@click.option("--feeder", required=True, help="Feeder file, or the name of a known feeder")
@click.option("--pg", default=None, help="PV active output per bus, comma-separated in bus order")
@click.option("--pc", default=None, help="Active load per bus")
@click.option("--qc", default=None, help="Reactive load per bus")
@click.option(
    "--profiles", "profiles_csv", type=click.Path(dir_okay=False), default=None,
    help="Take the condition from a profile CSV",
)
@click.option("--index", type=int, default=0, show_default=True, help="Profile row to solve")
@click.option("--tol", type=float, default=None, help="Solver tolerance")
@click.option("--no-soften", is_flag=True, help="Report infeasibility instead of softening")
@click.option("--json", "as_json", is_flag=True, help="Print the solution as JSON")
def solve_opf(feeder, pg, pc, qc, profiles_csv, index, tol, no_soften, as_json):
    """Solve the dispatch for one operating condition."""
    try:
        model = resolve_feeder(feeder)
        s = build_sensitivities(model)
        oc = _condition_from_options(model, pg, pc, qc, profiles_csv, index)
        der_mask = np.zeros(model.n_buses, dtype=bool)
        der_mask[model.der_indices] = True
        oc.check_support(der_mask)
        solution = solve_lcqp(oc, s, model, tol=tol, soften=not no_soften)
    except VoltRiskError as e:
        exit_with_error(f"Error: {str(e)}")

    der = model.der_indices
    if as_json:
        data = solution.to_dict()
        data["bus_order"] = list(model.bus_ids)
        click.echo(json.dumps(data, indent=2))
    else:
        print_section_header(f"Dispatch on {model.name}")
        limits = model.reactive_limits(oc.p_gen)
        print_table(
            ["Bus", "q_gen", "Limit"],
            [
                [
                    model.bus_ids[i],
                    format_float(float(solution.q_gen[i])),
                    format_float(float(limits[i])),
                ]
                for i in der
            ],
        )
        details = {
            "status": solution.status.value,
            "objective": solution.objective,
            "kkt_residual": solution.kkt_residual,
            "slack_used": solution.slack_used,
            "iterations": solution.iterations,
        }
        if solution.status == SolveStatus.OPTIMAL and solution.duals is not None:
            residuals = kkt_residuals(solution.q_gen, solution.duals, oc, s, model)
            details.update(residuals._asdict())
        print_mapping(details, title="Solution")

    if solution.status == SolveStatus.INFEASIBLE:
        exit_with_error("Voltage limits cannot be met within the reactive limits")


@click.command(name="feeders")
def feeders():
    """List the feeders that can be referred to by name."""
    rows = []
    for name in list_available_feeders():
        path = find_feeder_file(name)
        try:
            model = load_feeder(path)
        except VoltRiskError as e:
            print_warning(f"{name}: {str(e)}")
            continue
        rows.append([
            name,
            model.n_buses,
            len(model.der_nodes),
            len(model.load_buses),
            max(tree_depths(model), default=0),
            format_float(model.base_kv),
            str(path),
        ])
    if not rows:
        print_info("No feeders found")
        return
    print_table(
        ["Name", "Buses", "DER", "Loads", "Depth", "Base kV", "File"], rows, title="Feeders"
    )
