"""
Tests for the command-line interface.
"""

import json

import pytest
from click.testing import CliRunner

from voltrisk import __version__
from voltrisk.cli.main import cli
from voltrisk.feeder import resolve_feeder
from voltrisk.opf import read_dataset

TRAIN_ARGS = [
    "--hidden", "4",
    "--max-epochs", "2",
    "--batch-size", "5",
    "--feature-set", "local",
    "--eta", "0.01",
]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def dataset_path(runner, tmp_path):
    """A one-day hourly dataset on chain3."""
    out = tmp_path / "data"
    result = runner.invoke(
        cli,
        [
            "gen-data", "--feeder", "chain3", "--days", "1",
            "--minutes-per-sample", "60", "--seed", "4", "-o", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    return out / "dataset.jsonl"


def test_version(runner):
    result = runner.invoke(cli, ["--version"])

    assert result.exit_code == 0
    assert __version__ in result.output


def test_risk_command(runner, tmp_path):
    losses = tmp_path / "losses.csv"
    losses.write_text("\n".join(str(k) for k in range(1, 11)) + "\n")

    result = runner.invoke(cli, ["risk", str(losses), "--alpha", "0.2"])
    assert result.exit_code == 0, result.output
    assert "9.5" in result.output

    result = runner.invoke(cli, ["risk", str(losses), "--alpha", "1"])
    assert result.exit_code == 0, result.output
    assert "5.5" in result.output


def test_risk_command_named_column(runner, tmp_path):
    losses = tmp_path / "losses.csv"
    losses.write_text("t,loss\n" + "".join(f"{k},{k * 2}\n" for k in range(1, 11)))
    histogram = tmp_path / "hist.csv"

    result = runner.invoke(
        cli,
        ["risk", str(losses), "--column", "loss", "--histogram", str(histogram)],
    )

    assert result.exit_code == 0, result.output
    assert "19" in result.output
    assert histogram.is_file()


def test_risk_command_errors(runner, tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    result = runner.invoke(cli, ["risk", str(empty)])
    assert result.exit_code == 1
    assert "Error" in result.output

    losses = tmp_path / "losses.csv"
    losses.write_text("1\n2\n")
    result = runner.invoke(cli, ["risk", str(losses), "--alpha", "0"])
    assert result.exit_code == 1

    result = runner.invoke(cli, ["risk", str(tmp_path / "missing.csv")])
    assert result.exit_code == 2


def test_solve_opf_json(runner):
    result = runner.invoke(
        cli, ["solve-opf", "--feeder", "two_bus", "--qc", "0.3", "--json"]
    )

    assert result.exit_code == 0, result.output
    data = json.loads(result.output)
    assert data["z"] == pytest.approx([0.1], abs=1e-9)
    assert data["status"] == "optimal"
    assert data["bus_order"] == ["1"]


def test_solve_opf_table(runner):
    result = runner.invoke(
        cli, ["solve-opf", "--feeder", "chain3", "--pg", "0,2", "--qc", "0.1,0.1"]
    )

    assert result.exit_code == 0, result.output
    assert "Dispatch on chain3" in result.output
    assert "optimal" in result.output


def test_solve_opf_errors(runner):
    result = runner.invoke(cli, ["solve-opf", "--feeder", "no-such-feeder"])
    assert result.exit_code == 1
    assert "Error" in result.output

    result = runner.invoke(cli, ["solve-opf", "--feeder", "two_bus", "--qc", "0.1,0.2"])
    assert result.exit_code == 2

    result = runner.invoke(
        cli, ["solve-opf", "--feeder", "two_bus", "--pg", "10", "--no-soften"]
    )
    assert result.exit_code == 1

    # PV on a bus without an inverter
    result = runner.invoke(cli, ["solve-opf", "--feeder", "chain3", "--pg", "1,0"])
    assert result.exit_code == 1


def test_feeders_command(runner):
    result = runner.invoke(cli, ["feeders"])

    assert result.exit_code == 0, result.output
    for name in ("chain3", "ieee123", "radial25", "two_bus"):
        assert name in result.output


def test_gen_data(dataset_path):
    dataset = read_dataset(dataset_path, resolve_feeder("chain3"))

    assert len(dataset) == 24
    assert (dataset_path.parent / "profiles.csv").is_file()


def test_gen_data_rejects_bad_profile_options(runner, tmp_path):
    result = runner.invoke(
        cli, ["gen-data", "--feeder", "chain3", "--days", "0", "-o", str(tmp_path)]
    )

    assert result.exit_code == 2


def test_train_rejects_unknown_mode(runner, dataset_path):
    result = runner.invoke(
        cli,
        ["train", "--dataset", str(dataset_path), "--feeder", "chain3", "--mode", "huber"],
    )

    assert result.exit_code == 2


def test_train_rejects_small_batch(runner, dataset_path):
    result = runner.invoke(
        cli,
        [
            "train", "--dataset", str(dataset_path), "--feeder", "chain3",
            "--alpha", "0.2", "--batch-size", "3",
        ],
    )

    assert result.exit_code == 2


def test_train_eval_compare(runner, tmp_path, dataset_path):
    """Two arms trained, evaluated and compared on the same dataset."""
    mse_path = tmp_path / "models" / "mse.json"
    sel_path = tmp_path / "models" / "cvar.json"
    common = ["--dataset", str(dataset_path), "--feeder", "chain3"]

    result = runner.invoke(
        cli, ["train", *common, "--mode", "mse", "-o", str(mse_path), *TRAIN_ARGS]
    )
    assert result.exit_code == 0, result.output
    assert mse_path.is_file()
    assert (tmp_path / "models" / "mse.log.jsonl").is_file()
    assert (tmp_path / "models" / "mse.summary.json").is_file()

    result = runner.invoke(
        cli,
        [
            "train", *common, "--mode", "CVaR(qg)", "--selection",
            "-o", str(sel_path), *TRAIN_ARGS,
        ],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(sel_path.read_text())["train_config"]["selection_enabled"]

    report_path = tmp_path / "report.json"
    result = runner.invoke(
        cli, ["eval", "--model", str(mse_path), *common, "-o", str(report_path)]
    )
    assert result.exit_code == 0, result.output
    assert json.loads(report_path.read_text())["n_samples"] == 5

    out = tmp_path / "comparison"
    result = runner.invoke(
        cli,
        [
            "compare", f"MSE={mse_path}", f"CVaR(qg)+Sel={sel_path}",
            *common, "-o", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    data = json.loads((out / "comparison.json").read_text())
    assert [row["arm"] for row in data["rows"]] == ["MSE", "CVaR(qg)+Sel"]
    assert data["rows"][1]["selection_enabled"] is True
    assert (out / "histogram_cvar_qg_sel.csv").is_file()


def test_compare_rejects_other_feeder(runner, tmp_path, dataset_path):
    result = runner.invoke(
        cli,
        [
            "compare", str(tmp_path / "missing.json"),
            "--dataset", str(dataset_path), "--feeder", "two_bus",
        ],
    )

    assert result.exit_code == 1
    assert "Error" in result.output


def test_run_experiment_needs_one_source(runner, tmp_path):
    result = runner.invoke(cli, ["run-experiment"])
    assert result.exit_code == 2

    config = tmp_path / "experiment.json"
    config.write_text("{}")
    result = runner.invoke(
        cli, ["run-experiment", "--config", str(config), "--preset", "prediction"]
    )
    assert result.exit_code == 2


def test_run_experiment_from_config(runner, tmp_path):
    config = tmp_path / "experiment.json"
    config.write_text(
        json.dumps(
            {
                "feeder": "chain3",
                "profiles": {"days": 1, "minutes_per_sample": 60},
                "train": {
                    "hidden_widths": [4],
                    "max_epochs": 2,
                    "batch_size": 5,
                    "feature_set": "local",
                    "eta": 0.01,
                },
                "arms": [
                    {"name": "MSE", "mode": "mse"},
                    {"name": "CVaR(qg)+Sel", "mode": "cvar_q", "selection_enabled": True},
                ],
                "seed": 7,
            }
        )
    )
    out = tmp_path / "experiment"

    result = runner.invoke(cli, ["run-experiment", "--config", str(config), "-o", str(out)])

    assert result.exit_code == 0, result.output
    for name in ("experiment.json", "profiles.csv", "dataset.jsonl", "comparison.md"):
        assert (out / name).is_file()
    assert (out / "models" / "mse.json").is_file()
    assert (out / "models" / "cvar_qg_sel.summary.json").is_file()
    data = json.loads((out / "comparison.json").read_text())
    assert len(data["rows"]) == 2


def test_run_experiment_bad_config(runner, tmp_path):
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps({"feeder": "chain3", "arms": []}))

    result = runner.invoke(cli, ["run-experiment", "--config", str(config)])

    assert result.exit_code == 2
