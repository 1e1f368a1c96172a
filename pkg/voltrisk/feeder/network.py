"""
Radial feeder parsing and LinDistFlow voltage sensitivities.

The feeder is validated as a tree rooted at the reference bus with networkx;
R and X are built from explicit path-intersection sums over root paths.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import networkx as nx
import numpy as np
from cachetools import LRUCache
from pydantic import ValidationError

from voltrisk.exceptions import VoltRiskError, check_length
from voltrisk.feeder.models import (
    FeederFile,
    FeederModel,
    Line,
    SensitivityPair,
    bus_sort_key,
    nan_to_zero,
)

logger = logging.getLogger(__name__)

# Sensitivities keyed by FeederModel.digest
_SENSITIVITY_CACHE: LRUCache = LRUCache(maxsize=32)


class FeederError(VoltRiskError):
    """Base exception for feeder parsing and validation."""

    pass


class FeederFormatError(FeederError):
    """The file is not valid JSON or does not follow the feeder schema."""

    pass


class MissingReferenceError(FeederError):
    """No reference bus was declared, or it is not connected to any line."""

    pass


class NonPositiveImpedanceError(FeederError):
    """A line has r <= 0 or x <= 0."""

    pass


class DuplicateLineError(FeederError):
    """Two lines connect the same pair of buses."""

    pass


class UnknownBusError(FeederError):
    """A line or DER refers to a bus that was never declared."""

    pass


class CycleError(FeederError):
    """The line graph contains a loop."""

    pass


class DisconnectedBusError(FeederError):
    """At least one bus cannot be reached from the reference."""

    pass


def load_feeder(path: Union[str, Path]) -> FeederModel:
    """
    Load and validate a feeder file.

    Args:
        path: Location of a feeder JSON file

    Returns:
        Validated FeederModel with buses sorted by id

    Raises:
        FeederFormatError: If the file is unreadable or malformed
        FeederError: For any topology or parameter violation
    """
    path = Path(path)
    if not path.is_file():
        raise FeederFormatError(f"Feeder file not found: {path}")

    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise FeederFormatError(f"Invalid JSON in feeder file {path}: {e}") from e

    model = parse_feeder(raw, default_name=path.stem)
    logger.debug(
        "Loaded feeder %s: %d buses, %d DER", model.name, model.n_buses, len(model.der_nodes)
    )
    return model


def parse_feeder(raw: Dict, default_name: str = "feeder") -> FeederModel:
    """
    Validate an already-decoded feeder document.

    Args:
        raw: Decoded JSON object
        default_name: Name used when the document has none

    Returns:
        Validated FeederModel
    """
    try:
        spec = FeederFile.model_validate(raw)
    except ValidationError as e:
        raise FeederFormatError(f"Feeder file does not match the schema: {e}") from e
    return build_feeder(spec, default_name=default_name)


def build_feeder(spec: FeederFile, default_name: str = "feeder") -> FeederModel:
    """
    Check topology and parameters, then assemble a FeederModel.

    Validation order: reference, impedances, duplicates, unknown buses, cycles,
    connectivity. The first failure wins.
    """
    reference = spec.reference
    if reference is None or reference == "":
        raise MissingReferenceError("Feeder declares no reference bus")

    declared: Dict[str, float] = {}
    for entry in spec.buses:
        bus = entry if isinstance(entry, str) else entry.id
        p_nominal = 0.0 if isinstance(entry, str) else entry.p_nominal
        if bus in declared:
            raise FeederFormatError(f"Bus '{bus}' is declared twice")
        declared[bus] = p_nominal

    if not any(reference in (ln.from_bus, ln.to_bus) for ln in spec.lines):
        raise MissingReferenceError(
            f"Reference bus '{reference}' does not appear on any line"
        )

    seen = set()
    for ln in spec.lines:
        if not (ln.r > 0.0 and ln.x > 0.0):
            raise NonPositiveImpedanceError(
                f"Line {ln.from_bus}-{ln.to_bus} has non-positive impedance "
                f"(r={ln.r}, x={ln.x})"
            )
    for ln in spec.lines:
        pair = frozenset((ln.from_bus, ln.to_bus))
        if len(pair) == 1:
            raise CycleError(f"Line {ln.from_bus}-{ln.to_bus} is a self-loop")
        if pair in seen:
            raise DuplicateLineError(
                f"Duplicate line between {ln.from_bus} and {ln.to_bus}"
            )
        seen.add(pair)

    # Buses may be declared implicitly by lines when the bus list is empty
    if not declared:
        for ln in spec.lines:
            for bus in (ln.from_bus, ln.to_bus):
                if bus != reference:
                    declared.setdefault(bus, 0.0)
    declared.pop(reference, None)

    known = set(declared) | {reference}
    for ln in spec.lines:
        for bus in (ln.from_bus, ln.to_bus):
            if bus not in known:
                raise UnknownBusError(f"Line refers to undeclared bus '{bus}'")

    graph = nx.Graph()
    graph.add_nodes_from(known)
    for ln in spec.lines:
        graph.add_edge(ln.from_bus, ln.to_bus, r=ln.r, x=ln.x)

    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        buses = " -> ".join(str(edge[0]) for edge in cycle)
        raise CycleError(f"Feeder contains a loop through {buses}")

    reachable = nx.node_connected_component(graph, reference)
    unreachable = sorted(known - reachable, key=bus_sort_key)
    if unreachable:
        raise DisconnectedBusError(
            f"Buses not connected to the reference: {', '.join(unreachable[:10])}"
        )

    bus_ids = tuple(sorted(declared, key=bus_sort_key))
    index = {bus: i for i, bus in enumerate(bus_ids)}

    # Orient every line parent -> child and order by child position
    parents = dict(nx.bfs_predecessors(graph, reference))
    lines: List[Line] = []
    for child in bus_ids:
        parent = parents[child]
        data = graph.edges[parent, child]
        lines.append(Line(parent, child, float(data["r"]), float(data["x"])))

    n = len(bus_ids)
    q_limits = [0.0] * n
    pv_capacity = [0.0] * n
    s_rating = [0.0] * n
    der_nodes = set()
    for der in spec.der:
        if der.bus not in index:
            raise UnknownBusError(f"DER refers to undeclared bus '{der.bus}'")
        if der.bus in der_nodes:
            raise FeederFormatError(f"DER at bus '{der.bus}' is declared twice")
        i = index[der.bus]
        der_nodes.add(der.bus)
        q_limits[i] = float(der.q_max)
        pv_capacity[i] = nan_to_zero(der.pv_capacity)
        s_rating[i] = nan_to_zero(der.s_rating)

    lower, upper = spec.v_bounds.lower, spec.v_bounds.upper
    if not lower < 0.0 < upper:
        raise FeederFormatError(
            f"Voltage bounds must satisfy lower < 0 < upper, got ({lower}, {upper})"
        )

    return FeederModel(
        reference_id=reference,
        bus_ids=bus_ids,
        lines=tuple(lines),
        der_nodes=frozenset(der_nodes),
        q_limits=tuple(q_limits),
        v_bounds=(float(lower), float(upper)),
        p_nominal=tuple(float(declared[bus]) for bus in bus_ids),
        pv_capacity=tuple(pv_capacity),
        s_rating=tuple(s_rating),
        name=spec.name or default_name,
        base_kv=spec.base_kv,
        base_kva=spec.base_kva,
    )


def feeder_graph(model: FeederModel) -> nx.DiGraph:
    """Directed tree from the reference outwards, edges carry r and x."""
    graph = nx.DiGraph()
    graph.add_node(model.reference_id)
    graph.add_nodes_from(model.bus_ids)
    for line in model.lines:
        graph.add_edge(line.from_bus, line.to_bus, r=line.r, x=line.x)
    return graph


def path_incidence(model: FeederModel) -> np.ndarray:
    """
    Root-path incidence matrix A (N x N lines).

    A[i, l] = 1 when line l lies on the path from the reference to bus i.
    Line l is the line feeding bus_ids[l].
    """
    n = model.n_buses
    index = model.index
    paths = nx.single_source_shortest_path(feeder_graph(model), model.reference_id)
    incidence = np.zeros((n, n))
    for bus, i in index.items():
        # Every bus after the reference on the path is fed by its own line
        for hop in paths[bus][1:]:
            incidence[i, index[hop]] = 1.0
    return incidence


def build_sensitivities(model: FeederModel) -> SensitivityPair:
    """
    Build the LinDistFlow R and X matrices.

    R[i, j] is the total resistance of the lines shared by the root paths of
    bus i and bus j; X likewise with reactances. Results are cached per feeder
    digest and returned read-only.

    Args:
        model: Validated feeder

    Returns:
        SensitivityPair in model.bus_ids order
    """
    key = model.digest
    cached = _SENSITIVITY_CACHE.get(key)
    if cached is not None:
        return cached

    incidence = path_incidence(model)
    r = np.array([line.r for line in model.lines])
    x = np.array([line.x for line in model.lines])
    R = (incidence * r) @ incidence.T
    X = (incidence * x) @ incidence.T
    R.setflags(write=False)
    X.setflags(write=False)

    pair = SensitivityPair(R=R, X=X, bus_order=model.bus_ids)
    _SENSITIVITY_CACHE[key] = pair
    return pair


def voltage_deviation(s: SensitivityPair, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """
    Voltage magnitude deviation v = R p + X q.

    Args:
        s: Sensitivity matrices
        p: Net active injection per bus (pu)
        q: Net reactive injection per bus (pu)

    Returns:
        N-vector of deviations from the reference voltage (pu)
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    check_length("p", p.shape[-1] if p.ndim else 0, s.n_buses)
    check_length("q", q.shape[-1] if q.ndim else 0, s.n_buses)
    return p @ s.R.T + q @ s.X.T


def tree_depths(model: FeederModel) -> Tuple[int, ...]:
    """Number of lines between the reference and each bus."""
    lengths = nx.single_source_shortest_path_length(
        feeder_graph(model), model.reference_id
    )
    return tuple(lengths[bus] for bus in model.bus_ids)

