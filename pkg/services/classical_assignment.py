"""All-or-nothing, MSA and Frank-Wolfe assignment for UE and SO objectives.

SO is solved as UE on marginal link costs, so both objectives share one solver
core. Frank-Wolfe moves toward a conjugate target (a blend of the previous
target and the new all-or-nothing vertex) with a bisection line search on the
directional derivative. Route flows are tracked alongside link flows by mixing
route tables with the same weights as the link flows.
"""

import logging
import math
from typing import Callable, Dict, List, Tuple

import numpy as np
from tqdm import tqdm

from models.assignment import (
    AssignmentResult,
    IterationRecord,
    Method,
    Objective,
    ODRouteFlows,
    RouteFlow,
)
from models.network import OD, DemandTable, FlowState, Network, Route
from services.errors import ConfigError, DegenerateNetworkError, NoPathError
from services.network_core import (
    beckmann_objective,
    check_flows,
    link_time_slopes,
    link_times,
    marginal_link_time_slopes,
    marginal_link_times,
    total_system_travel_time,
)
from services.shortest_paths import route_cost, shortest_path

logger = logging.getLogger(__name__)

BISECTION_ITERATIONS = 60
CONJUGATE_WEIGHT_MAX = 0.99
DEFAULT_FLOW_FLOOR = 0.5

RouteFlowTable = Dict[OD, Dict[Tuple[int, ...], float]]


def effective_costs(net: Network, flows: FlowState, obj: Objective) -> np.ndarray:
    """Link times for UE, marginal link times for SO."""
    if Objective(obj) is Objective.SO:
        return marginal_link_times(net, flows)
    return link_times(net, flows)


def effective_slopes(net: Network, flows: FlowState, obj: Objective) -> np.ndarray:
    """Derivative of effective_costs per link (diagonal Hessian of the objective)."""
    if Objective(obj) is Objective.SO:
        return marginal_link_time_slopes(net, flows)
    return link_time_slopes(net, flows)


def objective_value(net: Network, flows: FlowState, obj: Objective) -> float:
    """Beckmann objective for UE, TSTT for SO."""
    if Objective(obj) is Objective.SO:
        return total_system_travel_time(net, flows)
    return beckmann_objective(net, flows)


def _shortest_routes(
    net: Network, costs: np.ndarray, demand: DemandTable
) -> Dict[OD, Tuple[Route, float]]:
    routes = {}
    for entry in demand.entries:
        if entry.demand <= 0:
            continue
        try:
            route = shortest_path(net, costs, entry.origin, entry.destination)
        except NoPathError as e:
            raise NoPathError(f"OD {entry.od} cannot be loaded: {e.detail}")
        routes[entry.od] = (route, route_cost(route, costs))
    return routes


def _load(net: Network, routes: Dict[OD, Tuple[Route, float]], demand: DemandTable) -> np.ndarray:
    volumes = np.zeros(net.num_links)
    for entry in demand.entries:
        if entry.od not in routes:
            continue
        route, _ = routes[entry.od]
        volumes[list(route.links)] += entry.demand
    return volumes


def all_or_nothing(net: Network, costs, demand: DemandTable) -> np.ndarray:
    """Load each OD's full demand on its shortest route under fixed costs."""
    return _load(net, _shortest_routes(net, np.asarray(costs, dtype=float), demand), demand)


def _gap(
    flows: np.ndarray,
    costs: np.ndarray,
    routes: Dict[OD, Tuple[Route, float]],
    demand: DemandTable,
) -> float:
    total_cost = float(np.dot(flows, costs))
    shortest_cost = sum(demand.demand_of(od) * cost for od, (_, cost) in routes.items())
    if shortest_cost <= 0:
        if demand.total > 0:
            raise DegenerateNetworkError(
                "Shortest-path cost is zero with positive demand; relative gap is undefined"
            )
        return 0.0
    return total_cost / shortest_cost - 1.0


def relative_gap(net: Network, flows: FlowState, demand: DemandTable, obj: Objective) -> float:
    """TC / SPC - 1 under the objective's effective costs."""
    volumes = check_flows(net, flows)
    costs = effective_costs(net, volumes, obj)
    return _gap(volumes, costs, _shortest_routes(net, costs, demand), demand)


def _msa_step(iteration: int) -> float:
    return 1.0 / iteration


def bisect_step(
    derivative: Callable[[float], float], iterations: int = BISECTION_ITERATIONS
) -> float:
    """Step in [0, 1] where a nondecreasing directional derivative crosses zero.

    Returns the lower end of the final bracket, so the objective never rises.
    """
    if derivative(0.0) >= 0.0:
        return 0.0
    if derivative(1.0) <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if derivative(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def _line_search(net: Network, obj: Objective, x: np.ndarray, direction: np.ndarray) -> float:
    def derivative(lam: float) -> float:
        point = np.maximum(x + lam * direction, 0.0)
        return float(np.dot(effective_costs(net, point, obj), direction))

    return bisect_step(derivative)


def conjugate_weight(
    slopes: np.ndarray, x: np.ndarray, previous: np.ndarray, y: np.ndarray
) -> float:
    """Weight on the previous target that makes the new direction conjugate to the last one."""
    last = (previous - x) * slopes
    numerator = float(np.dot(last, y - x))
    denominator = float(np.dot(last, y - previous))
    if denominator == 0.0 or not math.isfinite(numerator / denominator):
        return 0.0
    return min(max(numerator / denominator, 0.0), CONJUGATE_WEIGHT_MAX)


def _route_flow_table(routes: Dict[OD, Tuple[Route, float]], demand: DemandTable) -> RouteFlowTable:
    return {od: {route.links: demand.demand_of(od)} for od, (route, _) in routes.items()}


def _mix(old: RouteFlowTable, new: RouteFlowTable, keep: float) -> RouteFlowTable:
    """keep * old + (1 - keep) * new, per OD and route."""
    mixed = {}
    for od, incoming in new.items():
        previous = old.get(od, {})
        flows = {}
        for links in list(previous) + [links for links in incoming if links not in previous]:
            value = keep * previous.get(links, 0.0) + (1.0 - keep) * incoming.get(links, 0.0)
            if value > 0.0:
                flows[links] = value
        mixed[od] = flows
    return mixed


def _route_flow_rows(demand: DemandTable, route_flows: RouteFlowTable) -> List[ODRouteFlows]:
    rows = []
    for entry in demand.entries:
        flows = route_flows.get(entry.od, {})
        ordered = sorted(flows.items(), key=lambda item: (-item[1], item[0]))
        rows.append(
            ODRouteFlows(
                origin=entry.origin,
                destination=entry.destination,
                demand=entry.demand,
                routes=[
                    RouteFlow(route=Route(od=entry.od, links=links), flow=flow)
                    for links, flow in ordered
                ],
            )
        )
    return rows


def _solve(
    net: Network,
    demand: DemandTable,
    obj: Objective,
    method: Method,
    max_iters: int,
    gap_tol: float,
    show_progress: bool = False,
    conjugate: bool = True,
) -> AssignmentResult:
    if max_iters < 1:
        raise ConfigError(f"max_iters must be at least 1, got {max_iters}")
    obj = Objective(obj)
    method = Method(method)

    costs = effective_costs(net, np.zeros(net.num_links), obj)
    routes = _shortest_routes(net, costs, demand)
    x = _load(net, routes, demand)
    route_flows = _route_flow_table(routes, demand)
    target, target_flows = None, None
    iterations = 1
    history = []

    with tqdm(
        total=max_iters, desc=f"{obj.value.upper()}-{method.value.upper()}", disable=not show_progress
    ) as progress:
        progress.update(1)
        while True:
            costs = effective_costs(net, x, obj)
            routes = _shortest_routes(net, costs, demand)
            gap = _gap(x, costs, routes, demand)
            tstt = total_system_travel_time(net, x)
            history.append(
                IterationRecord(
                    iteration=iterations,
                    tstt=tstt,
                    objective=objective_value(net, x, obj),
                    relative_gap=gap,
                )
            )
            if iterations % 100 == 0:
                logger.debug(f"iteration {iterations}: tstt={tstt:.4f} gap={gap:.3e}")
            if gap <= gap_tol or iterations >= max_iters:
                break

            y = _load(net, routes, demand)
            y_flows = _route_flow_table(routes, demand)
            if method is Method.MSA:
                target, target_flows = y, y_flows
                step = _msa_step(iterations + 1)
            else:
                weight = 0.0
                if conjugate and target is not None:
                    weight = conjugate_weight(effective_slopes(net, x, obj), x, target, y)
                    # a blend that is not a descent direction restarts from the vertex
                    if weight > 0.0 and np.dot(costs, weight * target + (1.0 - weight) * y - x) >= 0.0:
                        weight = 0.0
                if weight > 0.0:
                    target = weight * target + (1.0 - weight) * y
                    target_flows = _mix(target_flows, y_flows, weight)
                else:
                    target, target_flows = y, y_flows
                step = _line_search(net, obj, x, target - x)
                if step <= 0.0:
                    logger.info(f"Line search stalled at iteration {iterations} (gap {gap:.3e})")
                    break
            x = (1.0 - step) * x + step * target
            route_flows = _mix(route_flows, target_flows, 1.0 - step)
            iterations += 1
            progress.update(1)

    converged = gap <= gap_tol
    logger.info(
        f"{obj.value.upper()}-{method.value.upper()} on '{net.name}': tstt={tstt:.4f} "
        f"iterations={iterations} gap={gap:.3e} converged={converged}"
    )
    return AssignmentResult(
        method=method,
        objective=obj,
        flows=x.tolist(),
        tstt=tstt,
        iterations=iterations,
        relative_gap=gap,
        converged=converged,
        route_flows=_route_flow_rows(demand, route_flows),
        history=history,
    )


def solve_msa(
    net: Network,
    demand: DemandTable,
    obj: Objective,
    max_iters: int = 10000,
    gap_tol: float = 1e-4,
    show_progress: bool = False,
) -> AssignmentResult:
    """Method of successive averages with step 1/i."""
    return _solve(net, demand, obj, Method.MSA, max_iters, gap_tol, show_progress)


def solve_frank_wolfe(
    net: Network,
    demand: DemandTable,
    obj: Objective,
    max_iters: int = 10000,
    gap_tol: float = 1e-4,
    show_progress: bool = False,
    conjugate: bool = True,
) -> AssignmentResult:
    """Frank-Wolfe minimizing Beckmann (UE) or TSTT (SO); conjugate directions unless turned off."""
    return _solve(net, demand, obj, Method.FW, max_iters, gap_tol, show_progress, conjugate)


def solve(
    net: Network,
    demand: DemandTable,
    method: Method,
    obj: Objective,
    max_iters: int = 10000,
    gap_tol: float = 1e-4,
    show_progress: bool = False,
) -> AssignmentResult:
    solver = solve_frank_wolfe if Method(method) is Method.FW else solve_msa
    return solver(net, demand, obj, max_iters, gap_tol, show_progress)


def extract_so_route_set(
    result: AssignmentResult, flow_floor: float = DEFAULT_FLOW_FLOOR
) -> Dict[OD, List[Route]]:
    """Routes carrying more than flow_floor vehicles, by descending flow."""
    route_sets = {}
    for item in result.route_flows:
        kept = [entry.route for entry in item.routes if entry.flow > flow_floor]
        if item.demand > 0 and not kept:
            raise ConfigError(
                f"No route for OD {item.od} carries more than {flow_floor} vehicles; "
                f"lower the flow floor"
            )
        if kept:
            route_sets[item.od] = kept
    return route_sets
