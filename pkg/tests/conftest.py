"""
Shared fixtures for the voltrisk tests.
"""

from typing import Callable, Dict, List, Optional

import numpy as np
import pytest

from voltrisk.config import reset_config
from voltrisk.feeder import FeederModel, parse_feeder, resolve_feeder
from voltrisk.opf import (
    Dataset,
    DatasetSample,
    OperatingCondition,
    OpfSolution,
    SolveStatus,
)


@pytest.fixture(autouse=True)
def isolated_config(tmp_path, monkeypatch):
    """Point the output directory at tmp_path and re-read the environment."""
    monkeypatch.setenv("VOLTRISK_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.delenv("VOLTRISK_FEEDERS_DIR", raising=False)
    monkeypatch.delenv("VOLTRISK_WORKERS", raising=False)
    reset_config()
    yield
    reset_config()


@pytest.fixture
def two_bus() -> FeederModel:
    return resolve_feeder("two_bus")


@pytest.fixture
def chain3() -> FeederModel:
    return resolve_feeder("chain3")


@pytest.fixture
def radial25() -> FeederModel:
    return resolve_feeder("radial25")


def random_feeder_document(
    seed: int, n_buses: int, n_der: int = 2, q_max: float = 0.5
) -> Dict:
    """A random radial feeder in the file format, buses "1".."n"."""
    rng = np.random.default_rng(seed)
    lines = []
    for child in range(1, n_buses + 1):
        parent = int(rng.integers(0, child))
        lines.append(
            {
                "from": str(parent),
                "to": str(child),
                "r": float(rng.uniform(1e-3, 0.1)),
                "x": float(rng.uniform(1e-3, 0.1)),
            }
        )
    der_buses = rng.choice(
        np.arange(1, n_buses + 1), size=min(n_der, n_buses), replace=False
    )
    return {
        "name": f"random{seed}",
        "reference": "0",
        "buses": [str(bus) for bus in range(1, n_buses + 1)],
        "lines": lines,
        "der": [{"bus": str(bus), "q_max": q_max} for bus in sorted(der_buses)],
        "v_bounds": {"lower": -0.05, "upper": 0.05},
    }


@pytest.fixture
def random_feeder() -> Callable[..., FeederModel]:
    """Factory for random radial feeders."""

    def build(seed: int, n_buses: int, n_der: int = 2, q_max: float = 0.5) -> FeederModel:
        return parse_feeder(random_feeder_document(seed, n_buses, n_der, q_max))

    return build


def random_conditions(
    model: FeederModel, n_samples: int, seed: int, scale: float = 0.5
) -> List[OperatingCondition]:
    """Independent uniform injections, PV only on DER buses."""
    rng = np.random.default_rng(seed)
    der_mask = np.zeros(model.n_buses, dtype=bool)
    der_mask[model.der_indices] = True
    conditions = []
    for t in range(n_samples):
        p_gen = np.where(der_mask, rng.uniform(0.0, scale, model.n_buses), 0.0)
        conditions.append(
            OperatingCondition(
                p_gen=p_gen,
                p_load=rng.uniform(0.0, scale, model.n_buses),
                q_load=rng.uniform(0.0, 0.5 * scale, model.n_buses),
                timestamp=t,
            )
        )
    return conditions


@pytest.fixture
def linear_dataset() -> Callable[..., Dataset]:
    """
    Factory for datasets whose labels are an affine function of each DER
    bus's local injections, so a linear policy can fit them exactly.
    """

    def build(
        model: FeederModel,
        n_samples: int = 100,
        seed: int = 0,
        coefficients: Optional[np.ndarray] = None,
        train_fraction: float = 0.8,
    ) -> Dataset:
        weights = (
            np.array([0.3, -0.2, 0.5]) if coefficients is None else coefficients
        )
        der = model.der_indices
        samples = []
        for oc in random_conditions(model, n_samples, seed):
            q_gen = np.zeros(model.n_buses)
            local = np.stack([oc.p_gen[der], oc.p_load[der], oc.q_load[der]], axis=-1)
            q_gen[der] = local @ weights + 0.01
            solution = OpfSolution(q_gen, 0.0, 0.0, SolveStatus.OPTIMAL)
            samples.append(DatasetSample(oc, solution))
        return Dataset(
            samples=samples,
            feeder_ref=model.digest,
            split_index=int(train_fraction * n_samples),
            bus_order=model.bus_ids,
        )

    return build
