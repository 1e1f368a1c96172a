"""
Synthetic load and PV profiles, and the long-format profile CSV.

Profile CSV columns: t,bus,p_gen,p_load,q_load (one row per sample and bus,
per-unit values).
"""

import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from voltrisk.feeder.models import FeederModel
from voltrisk.opf.models import InvalidConditionError, OperatingCondition
from voltrisk.utils.io import atomic_write

logger = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440
PROFILE_COLUMNS = ["t", "bus", "p_gen", "p_load", "q_load"]


class ProfileConfig(BaseModel):
    """Knobs of the synthetic profile generator."""

    days: int = Field(default=10, ge=1)
    minutes_per_sample: int = Field(default=1, ge=1, le=MINUTES_PER_DAY)
    pv_buses: Optional[List[str]] = None
    seed: int = 0
    noise: float = Field(default=0.1, ge=0.0, lt=1.0)
    power_factor: Tuple[float, float] = (0.9, 0.95)
    cloud_floor: float = Field(default=0.6, ge=0.0, le=1.0)
    load_scale: float = Field(default=1.0, gt=0.0)
    pv_scale: float = Field(default=1.0, ge=0.0)
    default_load: float = Field(default=0.1, ge=0.0)
    default_pv_capacity: float = Field(default=1.0, ge=0.0)

    @field_validator("power_factor")
    @classmethod
    def check_power_factor(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        low, high = value
        if not 0.0 < low <= high <= 1.0:
            raise ValueError("power factor range must satisfy 0 < low <= high <= 1")
        return value

    @property
    def n_samples(self) -> int:
        return self.days * MINUTES_PER_DAY // self.minutes_per_sample


def reactive_from_power_factor(p: np.ndarray, pf: np.ndarray) -> np.ndarray:
    """q = p·tan(arccos(pf))."""
    return p * np.tan(np.arccos(pf))


def load_shape(hours: np.ndarray) -> np.ndarray:
    """Diurnal load multiplier in [0.3, 1.0], peaking at 19:00."""
    return 0.65 + 0.35 * np.cos(2.0 * np.pi * (hours - 19.0) / 24.0)


def solar_shape(hours: np.ndarray) -> np.ndarray:
    """Clear-sky PV multiplier, zero outside 06:00-18:00."""
    shape = np.sin(np.pi * (hours - 6.0) / 12.0)
    return np.where((hours > 6.0) & (hours < 18.0), np.maximum(shape, 0.0), 0.0)


def generate_profiles(config: ProfileConfig, model: FeederModel) -> List[OperatingCondition]:
    """
    Synthesize chronologically ordered operating conditions.

    Loads follow a diurnal sinusoid with bounded multiplicative noise; PV
    output follows a clear-sky arc scaled by a per-day cloud factor and is
    zero at night. Reactive loads come from a power factor drawn uniformly
    per bus and sample.

    Args:
        config: Generator settings (the seed fixes every draw)
        model: Feeder providing nominal loads and PV capacities

    Returns:
        days·1440/minutes_per_sample conditions
    """
    n = model.n_buses
    k = config.n_samples
    pv_buses = sorted(model.der_nodes) if config.pv_buses is None else config.pv_buses
    for bus in pv_buses:
        if bus not in model.der_nodes:
            raise InvalidConditionError(f"PV bus '{bus}' has no inverter")

    nominal = np.array(model.p_nominal, dtype=float)
    if not np.any(nominal > 0.0):
        nominal = np.full(n, config.default_load)
    capacity = np.zeros(n)
    for bus in pv_buses:
        i = model.index[bus]
        capacity[i] = model.pv_capacity[i] or config.default_pv_capacity

    rng = np.random.default_rng(config.seed)
    load_noise = rng.uniform(-config.noise, config.noise, size=(k, n))
    pv_noise = rng.uniform(-config.noise, config.noise, size=(k, n))
    clouds = rng.uniform(config.cloud_floor, 1.0, size=(config.days, n))
    pf_low, pf_high = config.power_factor
    power_factor = rng.uniform(pf_low, pf_high, size=(k, n))

    minutes = np.arange(k) * config.minutes_per_sample
    hours = (minutes % MINUTES_PER_DAY) / 60.0
    day = minutes // MINUTES_PER_DAY

    p_load = config.load_scale * nominal * load_shape(hours)[:, None] * (1.0 + load_noise)
    q_load = reactive_from_power_factor(p_load, power_factor)
    p_gen = (
        config.pv_scale
        * capacity
        * solar_shape(hours)[:, None]
        * clouds[day]
        * (1.0 + pv_noise)
    )
    p_gen = np.clip(p_gen, 0.0, None)

    logger.info(
        "Generated %d samples over %d days on %d buses (%d with PV)",
        k, config.days, n, len(pv_buses),
    )
    return [
        OperatingCondition(p_gen[t], p_load[t], q_load[t], timestamp=t)
        for t in range(k)
    ]


def profiles_to_frame(profiles: List[OperatingCondition], model: FeederModel) -> pd.DataFrame:
    """Long-format frame with PROFILE_COLUMNS."""
    n = model.n_buses
    k = len(profiles)
    return pd.DataFrame(
        {
            "t": np.repeat([oc.timestamp for oc in profiles], n),
            "bus": np.tile(np.array(model.bus_ids, dtype=object), k),
            "p_gen": np.concatenate([oc.p_gen for oc in profiles]) if k else [],
            "p_load": np.concatenate([oc.p_load for oc in profiles]) if k else [],
            "q_load": np.concatenate([oc.q_load for oc in profiles]) if k else [],
        },
        columns=PROFILE_COLUMNS,
    )


def write_profiles(
    profiles: List[OperatingCondition], model: FeederModel, path: Union[str, Path]
) -> Path:
    """Write profiles as CSV, atomically."""
    frame = profiles_to_frame(profiles, model)
    with atomic_write(path) as handle:
        frame.to_csv(handle, index=False)
    return Path(path)


def read_profiles(path: Union[str, Path], model: FeederModel) -> List[OperatingCondition]:
    """
    Read a profile CSV for the given feeder.

    Buses absent for a sample are taken as zero injection. Unknown buses and
    PV output on buses without inverters are rejected.

    Args:
        path: CSV with header t,bus,p_gen,p_load,q_load
        model: Feeder the profiles belong to

    Returns:
        Operating conditions sorted by t
    """
    frame = pd.read_csv(path, dtype={"bus": str})
    missing = [column for column in PROFILE_COLUMNS if column not in frame.columns]
    if missing:
        raise InvalidConditionError(
            f"Profile file {path} lacks columns: {', '.join(missing)}"
        )

    unknown = sorted(set(frame["bus"]) - set(model.bus_ids))
    if unknown:
        raise InvalidConditionError(
            f"Profile file {path} refers to unknown buses: {', '.join(unknown[:10])}"
        )
    if frame.duplicated(subset=["t", "bus"]).any():
        raise InvalidConditionError(f"Profile file {path} repeats a (t, bus) pair")

    der_mask = np.zeros(model.n_buses, dtype=bool)
    der_mask[model.der_indices] = True

    profiles = []
    for column in ("p_gen", "p_load", "q_load"):
        frame[column] = frame[column].astype(float)
    pivots = {
        column: frame.pivot(index="t", columns="bus", values=column)
        .reindex(columns=list(model.bus_ids))
        .fillna(0.0)
        .sort_index()
        for column in ("p_gen", "p_load", "q_load")
    }
    for t in pivots["p_gen"].index:
        oc = OperatingCondition(
            p_gen=pivots["p_gen"].loc[t].to_numpy(dtype=float),
            p_load=pivots["p_load"].loc[t].to_numpy(dtype=float),
            q_load=pivots["q_load"].loc[t].to_numpy(dtype=float),
            timestamp=int(t),
        )
        oc.check_support(der_mask)
        profiles.append(oc)

    logger.info("Read %d samples from %s", len(profiles), path)
    return profiles
