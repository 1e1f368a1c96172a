"""
Optimal reactive dispatch: the LCQP solver, profile synthesis and datasets.
"""

from voltrisk.opf.dataset import generate_dataset, read_dataset, write_dataset
from voltrisk.opf.models import (
    AllSamplesInfeasibleError,
    Dataset,
    DatasetError,
    DatasetSample,
    FeederMismatchError,
    InvalidConditionError,
    KktResiduals,
    OperatingCondition,
    OpfSolution,
    SolveStatus,
)
from voltrisk.opf.profiles import (
    ProfileConfig,
    generate_profiles,
    reactive_from_power_factor,
    read_profiles,
    write_profiles,
)
from voltrisk.opf.solver import (
    IterationLimitError,
    NotPositiveDefiniteError,
    QpProblem,
    SolverError,
    build_problem,
    constraint_values,
    kkt_residuals,
    load_offset,
    objective_value,
    solve_lcqp,
)

__all__ = [
    "OperatingCondition",
    "OpfSolution",
    "KktResiduals",
    "SolveStatus",
    "Dataset",
    "DatasetSample",
    "DatasetError",
    "InvalidConditionError",
    "AllSamplesInfeasibleError",
    "FeederMismatchError",
    "SolverError",
    "NotPositiveDefiniteError",
    "IterationLimitError",
    "QpProblem",
    "build_problem",
    "load_offset",
    "objective_value",
    "constraint_values",
    "kkt_residuals",
    "solve_lcqp",
    "ProfileConfig",
    "generate_profiles",
    "reactive_from_power_factor",
    "read_profiles",
    "write_profiles",
    "generate_dataset",
    "read_dataset",
    "write_dataset",
]
