"""
Radial feeder models and LinDistFlow voltage sensitivities.
"""

from voltrisk.feeder.library import (
    find_feeder_file,
    get_feeders_dirs,
    list_available_feeders,
    resolve_feeder,
)
from voltrisk.feeder.models import FeederFile, FeederModel, Line, SensitivityPair
from voltrisk.feeder.network import (
    CycleError,
    DisconnectedBusError,
    DuplicateLineError,
    FeederError,
    FeederFormatError,
    MissingReferenceError,
    NonPositiveImpedanceError,
    UnknownBusError,
    build_feeder,
    build_sensitivities,
    feeder_graph,
    load_feeder,
    parse_feeder,
    path_incidence,
    tree_depths,
    voltage_deviation,
)

__all__ = [
    "FeederFile",
    "FeederModel",
    "Line",
    "SensitivityPair",
    "FeederError",
    "FeederFormatError",
    "MissingReferenceError",
    "NonPositiveImpedanceError",
    "DuplicateLineError",
    "UnknownBusError",
    "CycleError",
    "DisconnectedBusError",
    "load_feeder",
    "parse_feeder",
    "build_feeder",
    "build_sensitivities",
    "voltage_deviation",
    "feeder_graph",
    "path_incidence",
    "tree_depths",
    "list_available_feeders",
    "resolve_feeder",
    "find_feeder_file",
    "get_feeders_dirs",
]
