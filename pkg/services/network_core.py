"""Link performance, marginal costs, TSTT and network / demand file IO."""

import logging
import math
from pathlib import Path
from typing import Tuple, Union

import networkx as nx
import numpy as np
from pydantic import ValidationError

from models.network import (
    AffineCost,
    BPRCost,
    CostFunction,
    DemandTable,
    FlowState,
    Network,
)
from services.errors import (
    DataFileError,
    DomainError,
    NetworkValidationError,
    StructuralError,
)
from utils.tntp import parse_link_file, parse_trips_file, write_link_file, write_trips_file

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _check_flow(x: float) -> float:
    if x < 0:
        raise DomainError(f"Link flow must be nonnegative, got {x}")
    return float(x)


def link_time(cost_fn: CostFunction, x: float) -> float:
    """Travel time in minutes on one link carrying x vehicles."""
    x = _check_flow(x)
    if isinstance(cost_fn, BPRCost):
        return cost_fn.t0 * (1.0 + cost_fn.alpha * (x / cost_fn.capacity) ** cost_fn.beta)
    return cost_fn.a + cost_fn.b * x


def marginal_link_time(cost_fn: CostFunction, x: float) -> float:
    """c(x) + x * c'(x): own time plus the delay imposed on everyone else."""
    x = _check_flow(x)
    if isinstance(cost_fn, BPRCost):
        return cost_fn.t0 * (
            1.0
            + cost_fn.alpha * (1.0 + cost_fn.beta) * (x / cost_fn.capacity) ** cost_fn.beta
        )
    return cost_fn.a + 2.0 * cost_fn.b * x


def link_time_integral(cost_fn: CostFunction, x: float) -> float:
    """Integral of c from 0 to x (one Beckmann term)."""
    x = _check_flow(x)
    if isinstance(cost_fn, AffineCost):
        return cost_fn.a * x + 0.5 * cost_fn.b * x * x
    ratio = x / cost_fn.capacity
    return cost_fn.t0 * (
        x + cost_fn.alpha * cost_fn.capacity / (cost_fn.beta + 1.0) * ratio ** (cost_fn.beta + 1.0)
    )


def check_flows(net: Network, flows: FlowState) -> np.ndarray:
    volumes = np.asarray(flows, dtype=float)
    if volumes.shape != (net.num_links,):
        raise StructuralError(
            f"Flow vector has shape {volumes.shape}, network '{net.name}' has "
            f"{net.num_links} links"
        )
    if np.any(volumes < 0):
        raise DomainError(f"Negative link flow at links {np.flatnonzero(volumes < 0).tolist()}")
    return volumes


def link_times(net: Network, flows: FlowState) -> np.ndarray:
    """Vectorized link_time over every link."""
    x = check_flows(net, flows)
    p = net.cost_arrays
    ratio = x / p.capacity
    bpr = p.t0 * (1.0 + p.alpha * ratio**p.beta)
    return np.where(p.is_bpr, bpr, p.a + p.b * x)


def marginal_link_times(net: Network, flows: FlowState) -> np.ndarray:
    """Vectorized marginal_link_time over every link."""
    x = check_flows(net, flows)
    p = net.cost_arrays
    ratio = x / p.capacity
    bpr = p.t0 * (1.0 + p.alpha * (1.0 + p.beta) * ratio**p.beta)
    return np.where(p.is_bpr, bpr, p.a + 2.0 * p.b * x)


def link_time_slopes(net: Network, flows: FlowState) -> np.ndarray:
    """dc/dx per link."""
    x = check_flows(net, flows)
    p = net.cost_arrays
    ratio = x / p.capacity
    bpr = p.t0 * p.alpha * p.beta * ratio ** (p.beta - 1.0) / p.capacity
    return np.where(p.is_bpr, bpr, p.b)


def marginal_link_time_slopes(net: Network, flows: FlowState) -> np.ndarray:
    """d/dx of the marginal link time, i.e. the TSTT Hessian diagonal."""
    x = check_flows(net, flows)
    p = net.cost_arrays
    ratio = x / p.capacity
    bpr = p.t0 * p.alpha * (1.0 + p.beta) * p.beta * ratio ** (p.beta - 1.0) / p.capacity
    return np.where(p.is_bpr, bpr, 2.0 * p.b)


def total_system_travel_time(net: Network, flows: FlowState) -> float:
    """Sum over links of x_e * c_e(x_e), exactly rounded and independent of link order."""
    x = check_flows(net, flows)
    return math.fsum((x * link_times(net, x)).tolist())


def beckmann_objective(net: Network, flows: FlowState) -> float:
    x = check_flows(net, flows)
    p = net.cost_arrays
    ratio = x / p.capacity
    bpr = p.t0 * (x + p.alpha * p.capacity / (p.beta + 1.0) * ratio ** (p.beta + 1.0))
    terms = np.where(p.is_bpr, bpr, p.a * x + 0.5 * p.b * x * x)
    return math.fsum(terms.tolist())


def validate_demand(net: Network, demand: DemandTable) -> None:
    """Every OD endpoint exists and every loaded OD is connected."""
    known = set(net.nodes)
    graph = None
    for entry in demand.entries:
        for endpoint in entry.od:
            if endpoint not in known:
                raise NetworkValidationError(
                    f"Demand entry {entry.od} references unknown node '{endpoint}'"
                )
        if entry.demand > 0:
            if graph is None:
                graph = net.to_networkx()
            if not nx.has_path(graph, entry.origin, entry.destination):
                raise NetworkValidationError(
                    f"Destination '{entry.destination}' is unreachable from "
                    f"origin '{entry.origin}'"
                )


def load_network(link_file: PathLike, trips_file: PathLike) -> Tuple[Network, DemandTable]:
    """Read and validate a TNTP-style link file and trips file."""
    link_path, trips_path = Path(link_file), Path(trips_file)
    for path in (link_path, trips_path):
        if not path.is_file():
            raise DataFileError("file not found", path=str(path))

    records = parse_link_file(link_path)
    entries = parse_trips_file(trips_path)

    seen_pairs = {}
    nodes = []
    for record in records:
        pair = (record.tail, record.head)
        if pair in seen_pairs:
            raise NetworkValidationError(
                f"{link_path}:{record.line}: duplicate link {record.tail} -> {record.head} "
                f"(first defined on line {seen_pairs[pair]})"
            )
        seen_pairs[pair] = record.line
        for node in pair:
            if node not in nodes:
                nodes.append(node)

    try:
        net = Network(
            name=link_path.stem,
            nodes=nodes,
            links=[
                {"id": i, "tail": r.tail, "head": r.head, "cost_fn": r.cost_fn}
                for i, r in enumerate(records)
            ],
        )
        demand = DemandTable(entries=entries)
    except ValidationError as e:
        raise NetworkValidationError(f"Invalid network data in {link_path}: {e}")

    validate_demand(net, demand)
    logger.info(
        f"Loaded network '{net.name}': {len(net.nodes)} nodes, {net.num_links} links, "
        f"{len(demand.entries)} OD pairs, total demand {demand.total:g}"
    )
    return net, demand


def save_network(
    net: Network, demand: DemandTable, link_file: PathLike, trips_file: PathLike
) -> None:
    write_link_file(net, Path(link_file))
    write_trips_file(demand, Path(trips_file))
    logger.info(f"Saved network '{net.name}' to {link_file} and {trips_file}")
