"""
Data models for the reactive dispatch problem.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from voltrisk.exceptions import VoltRiskError, check_length


class DatasetError(VoltRiskError):
    """Base exception for profile and dataset handling."""

    pass


class InvalidConditionError(DatasetError):
    """An operating condition violates its sign or support rules."""

    pass


class AllSamplesInfeasibleError(DatasetError):
    """No sample survived dataset generation."""

    pass


class FeederMismatchError(DatasetError):
    """Artifacts built on different feeders were combined."""

    pass


class SolveStatus(str, Enum):
    """Outcome of one LCQP solve."""

    OPTIMAL = "optimal"
    SOFTENED = "softened"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class OperatingCondition:
    """
    One system input y = (p_gen, p_load, q_load), per bus in feeder order.

    p_gen is the active PV output, p_load and q_load the consumption. All
    entries are nonnegative; p_gen must be zero off DER buses (checked against
    a feeder by check_support).
    """

    p_gen: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray
    timestamp: int = 0

    def __post_init__(self) -> None:
        for name in ("p_gen", "p_load", "q_load"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.ndim != 1:
                raise InvalidConditionError(f"{name} must be a vector")
            object.__setattr__(self, name, value)
        n = self.p_gen.shape[0]
        check_length("p_load", self.p_load.shape[0], n)
        check_length("q_load", self.q_load.shape[0], n)
        for name in ("p_gen", "p_load", "q_load"):
            value = getattr(self, name)
            if not np.all(np.isfinite(value)):
                raise InvalidConditionError(f"{name} contains non-finite values")
            if np.any(value < 0.0):
                raise InvalidConditionError(f"{name} must be nonnegative")

    @property
    def n_buses(self) -> int:
        return int(self.p_gen.shape[0])

    def check_support(self, der_mask: np.ndarray) -> None:
        """Raise InvalidConditionError if PV output appears off the DER buses."""
        if np.any(self.p_gen[~der_mask] != 0.0):
            raise InvalidConditionError(
                f"Sample {self.timestamp} has PV output on a bus without an inverter"
            )

    def to_dict(self) -> Dict[str, List[float]]:
        return {
            "pg": self.p_gen.tolist(),
            "pc": self.p_load.tolist(),
            "qc": self.q_load.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], timestamp: int = 0) -> "OperatingCondition":
        return cls(
            p_gen=np.array(data["pg"], dtype=float),
            p_load=np.array(data["pc"], dtype=float),
            q_load=np.array(data["qc"], dtype=float),
            timestamp=timestamp,
        )


class KktResiduals(NamedTuple):
    """
    Optimality residuals of a solution, all in gradient or constraint units.

    stationarity: max |x - clip(x - ∇L(x, μ), box)| over DER variables
    primal: largest voltage or box constraint violation
    dual: largest negative multiplier magnitude
    complementarity: max |μ_i g_i(x)| over voltage constraints
    """

    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


@dataclass(frozen=True, eq=False)
class OpfSolution:
    """
    Optimal reactive dispatch z for one operating condition.

    duals holds the 2N voltage-constraint multipliers in constraint_values
    order (upper limits first). For softened solutions they are the penalty
    multipliers penalty * slack.
    """

    q_gen: np.ndarray
    objective: float
    kkt_residual: float
    status: SolveStatus
    slack_used: float = 0.0
    duals: Optional[np.ndarray] = None
    iterations: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "z": self.q_gen.tolist(),
            "objective": self.objective,
            "status": self.status.value,
            "kkt_residual": self.kkt_residual,
            "slack_used": self.slack_used,
        }


@dataclass(frozen=True, eq=False)
class DatasetSample:
    """A labeled sample (y_k, z_k)."""

    condition: OperatingCondition
    solution: OpfSolution


@dataclass(eq=False)
class Dataset:
    """
    Chronologically ordered labeled samples on one feeder.

    Samples before split_index form the training split, the rest the test
    split.
    """

    samples: List[DatasetSample]
    feeder_ref: str
    split_index: int
    bus_order: Tuple[str, ...] = ()
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 < self.split_index < len(self.samples):
            raise DatasetError(
                f"split_index {self.split_index} must lie strictly inside "
                f"(0, {len(self.samples)})"
            )
        for sample in self.samples:
            if sample.solution.status == SolveStatus.INFEASIBLE:
                raise DatasetError(
                    f"Sample {sample.condition.timestamp} is infeasible"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def train(self) -> List[DatasetSample]:
        return self.samples[: self.split_index]

    @property
    def test(self) -> List[DatasetSample]:
        return self.samples[self.split_index :]

    def status_counts(self) -> Dict[str, int]:
        counts = {status.value: 0 for status in SolveStatus}
        for sample in self.samples:
            counts[sample.solution.status.value] += 1
        return counts
