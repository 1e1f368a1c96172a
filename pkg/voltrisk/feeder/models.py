"""
Data models for radial feeders.

FeederFile and friends are the pydantic schema of the feeder JSON format;
FeederModel and SensitivityPair are the immutable, validated objects the rest
of the package works with.

Feeder file format::

    {
      "name": "radial25",                      (optional)
      "description": "...",                    (optional)
      "base_kv": 4.16, "base_kva": 100.0,      (optional metadata)
      "reference": "0",
      "buses": ["1", {"id": "2", "p_nominal": 0.4}, ...],
      "lines": [{"from": "0", "to": "1", "r": 0.01, "x": 0.02}, ...],
      "der": [{"bus": "2", "q_max": 0.5, "pv_capacity": 1.0, "s_rating": 1.1}],
      "v_bounds": {"lower": -0.05, "upper": 0.05}
    }

All electrical quantities are per-unit. Voltages are magnitude deviations
from the reference bus, v = R p + X q with injections positive; there is no
factor 2 from the squared-magnitude form.
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from voltrisk.utils.io import canonical_json, sha256_text


class BusEntry(BaseModel):
    """A bus declaration with its optional nominal active load."""

    model_config = ConfigDict(extra="forbid")

    id: str
    p_nominal: float = Field(default=0.0, ge=0.0)


class LineEntry(BaseModel):
    """A line declaration as it appears in the file."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    from_bus: str = Field(alias="from")
    to_bus: str = Field(alias="to")
    r: float
    x: float


class DerEntry(BaseModel):
    """A controllable inverter."""

    model_config = ConfigDict(extra="forbid")

    bus: str
    q_max: float = Field(ge=0.0)
    pv_capacity: Optional[float] = Field(default=None, ge=0.0)
    s_rating: Optional[float] = Field(default=None, gt=0.0)


class VoltageBounds(BaseModel):
    """Per-unit deviation limits applied to every non-reference bus."""

    lower: float = -0.05
    upper: float = 0.05


class FeederFile(BaseModel):
    """Schema of a feeder JSON file."""

    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    description: Optional[str] = None
    base_kv: Optional[float] = None
    base_kva: Optional[float] = None
    reference: Optional[str] = None
    buses: List[Union[str, BusEntry]] = Field(default_factory=list)
    lines: List[LineEntry]
    der: List[DerEntry] = Field(default_factory=list)
    v_bounds: VoltageBounds = Field(default_factory=VoltageBounds)


@dataclass(frozen=True)
class Line:
    """A line oriented away from the reference bus (from_bus is the parent)."""

    from_bus: str
    to_bus: str
    r: float
    x: float


def bus_sort_key(bus_id: str) -> Tuple[int, Any]:
    """Sort numeric ids numerically, then everything else lexically."""
    return (0, int(bus_id), "") if bus_id.isdigit() else (1, 0, bus_id)


@dataclass(frozen=True)
class FeederModel:
    """
    A validated radial feeder.

    Build instances with voltrisk.feeder.build_feeder or load_feeder; the
    constructor itself does not check topology.
    """

    reference_id: str
    bus_ids: Tuple[str, ...]
    lines: Tuple[Line, ...]
    der_nodes: FrozenSet[str]
    q_limits: Tuple[float, ...]
    v_bounds: Tuple[float, float]
    p_nominal: Tuple[float, ...]
    pv_capacity: Tuple[float, ...]
    s_rating: Tuple[float, ...]
    name: str = "feeder"
    base_kv: Optional[float] = None
    base_kva: Optional[float] = None

    @property
    def n_buses(self) -> int:
        """Number of non-reference buses N."""
        return len(self.bus_ids)

    @cached_property
    def index(self) -> Dict[str, int]:
        """Map bus id -> position in bus order."""
        return {bus: i for i, bus in enumerate(self.bus_ids)}

    @cached_property
    def der_indices(self) -> np.ndarray:
        """Positions of DER buses in bus order, ascending."""
        return np.array(
            sorted(self.index[bus] for bus in self.der_nodes), dtype=np.int64
        )

    @property
    def load_buses(self) -> List[str]:
        """Buses with a positive nominal load."""
        return [bus for bus, p in zip(self.bus_ids, self.p_nominal) if p > 0.0]

    def q_limit_vector(self) -> np.ndarray:
        """Static reactive capability q̄ in bus order."""
        return np.array(self.q_limits, dtype=float)

    def reactive_limits(self, p_gen: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Effective reactive capability for a given active output.

        Where an inverter has an apparent-power rating the limit shrinks to
        sqrt(s² - p²); it never exceeds the configured q_max.

        Args:
            p_gen: Active PV output per bus, or None for the static limits

        Returns:
            N-vector of nonnegative limits
        """
        limits = self.q_limit_vector()
        if p_gen is None:
            return limits
        rating = np.array(self.s_rating, dtype=float)
        rated = rating > 0.0
        if np.any(rated):
            headroom = np.sqrt(np.maximum(rating**2 - np.asarray(p_gen) ** 2, 0.0))
            limits = np.where(rated, np.minimum(limits, headroom), limits)
        return limits

    def to_dict(self) -> Dict[str, Any]:
        """Serialize back to the feeder file format."""
        buses: List[Any] = []
        for bus, p in zip(self.bus_ids, self.p_nominal):
            buses.append({"id": bus, "p_nominal": p} if p > 0.0 else bus)
        der = []
        for bus in sorted(self.der_nodes, key=bus_sort_key):
            i = self.index[bus]
            entry: Dict[str, Any] = {"bus": bus, "q_max": self.q_limits[i]}
            if self.pv_capacity[i] > 0.0:
                entry["pv_capacity"] = self.pv_capacity[i]
            if self.s_rating[i] > 0.0:
                entry["s_rating"] = self.s_rating[i]
            der.append(entry)
        data: Dict[str, Any] = {
            "name": self.name,
            "reference": self.reference_id,
            "buses": buses,
            "lines": [
                {"from": line.from_bus, "to": line.to_bus, "r": line.r, "x": line.x}
                for line in self.lines
            ],
            "der": der,
            "v_bounds": {"lower": self.v_bounds[0], "upper": self.v_bounds[1]},
        }
        if self.base_kv is not None:
            data["base_kv"] = self.base_kv
        if self.base_kva is not None:
            data["base_kva"] = self.base_kva
        return data

    @cached_property
    def digest(self) -> str:
        """SHA-256 of the canonical model; identifies the feeder in artifacts."""
        return sha256_text(canonical_json(self.to_dict()))


@dataclass(frozen=True, eq=False)
class SensitivityPair:
    """
    The R and X matrices of the linearized DistFlow voltage model.

    Both are symmetric, entrywise nonnegative and positive definite for a
    connected radial feeder; row/column i corresponds to bus_order[i].
    """

    R: np.ndarray
    X: np.ndarray
    bus_order: Tuple[str, ...]

    @property
    def n_buses(self) -> int:
        return len(self.bus_order)


def nan_to_zero(value: Optional[float]) -> float:
    """Treat a missing optional quantity as zero."""
    if value is None or math.isnan(value):
        return 0.0
    return float(value)
