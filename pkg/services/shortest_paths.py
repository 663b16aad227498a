"""Shortest and k-shortest loopless routes under an external per-link cost vector.

Ties between equal-cost routes go to the lexicographically smallest link-id
sequence, so route sets are reproducible run to run.
"""

import heapq
import logging
from typing import FrozenSet, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from models.network import Network, Route
from services.errors import NoPathError, StructuralError

logger = logging.getLogger(__name__)


def _check_costs(net: Network, costs: Sequence[float]) -> List[float]:
    values = np.asarray(costs, dtype=float)
    if values.shape != (net.num_links,):
        raise StructuralError(
            f"Cost vector has shape {values.shape}, expected ({net.num_links},)"
        )
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise StructuralError("Link costs must be finite and nonnegative")
    return values.tolist()


def route_cost(route: Route, costs: Sequence[float]) -> float:
    """Cost of a route, summed along the route."""
    total = 0.0
    for link_id in route.links:
        total += costs[link_id]
    return total


def _dijkstra(
    net: Network,
    costs: List[float],
    source: str,
    target: str,
    banned_links: FrozenSet[int] = frozenset(),
    banned_nodes: FrozenSet[str] = frozenset(),
) -> Optional[Tuple[float, Tuple[int, ...]]]:
    # Labels are (cost, link sequence); comparing the tuple applies the tie rule.
    heap = [(0.0, (), source)]
    settled = set()
    while heap:
        cost, links, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if node == target:
            return cost, links
        for link_id in net.adjacency[node]:
            if link_id in banned_links:
                continue
            head = net.links[link_id].head
            if head in settled or head in banned_nodes:
                continue
            heapq.heappush(heap, (cost + costs[link_id], links + (link_id,), head))
    return None


def shortest_path(net: Network, costs: Sequence[float], o: str, d: str) -> Route:
    """Minimum-cost loopless route from o to d."""
    values = _check_costs(net, costs)
    for node in (o, d):
        if node not in net.adjacency:
            raise NoPathError(f"Node '{node}' is not in network '{net.name}'")
    found = _dijkstra(net, values, o, d)
    if found is None:
        raise NoPathError(f"No path from '{o}' to '{d}' in network '{net.name}'")
    return Route(od=(o, d), links=found[1])


def k_shortest_paths(
    net: Network, costs: Sequence[float], o: str, d: str, k: int
) -> List[Route]:
    """Yen's algorithm: up to k distinct loopless routes in nondecreasing cost."""
    if k < 1:
        raise StructuralError(f"k must be at least 1, got {k}")
    values = _check_costs(net, costs)
    if o not in net.adjacency or d not in net.adjacency:
        return []
    first = _dijkstra(net, values, o, d)
    if first is None:
        return []

    accepted: List[Tuple[float, Tuple[int, ...]]] = [first]
    candidates: List[Tuple[float, Tuple[int, ...]]] = []
    seen = {first[1]}

    while len(accepted) < k:
        _, previous = accepted[-1]
        previous_nodes = Route(od=(o, d), links=previous).nodes(net)
        for i in range(len(previous)):
            spur_node = previous_nodes[i]
            root = previous[:i]
            banned_links = frozenset(
                links[i] for _, links in accepted if len(links) > i and links[:i] == root
            )
            banned_nodes = frozenset(previous_nodes[:i])
            spur = _dijkstra(net, values, spur_node, d, banned_links, banned_nodes)
            if spur is None:
                continue
            links = root + spur[1]
            if links in seen:
                continue
            seen.add(links)
            total = route_cost(Route(od=(o, d), links=links), values)
            heapq.heappush(candidates, (total, links))
        if not candidates:
            break
        accepted.append(heapq.heappop(candidates))

    return [Route(od=(o, d), links=links) for _, links in accepted]


def enumerate_routes(net: Network, o: str, d: str) -> List[Route]:
    """Every loopless route from o to d (small networks only)."""
    graph = net.to_networkx()
    if o not in graph or d not in graph:
        return []
    routes = [
        Route(od=(o, d), links=tuple(key for _, _, key in edge_path))
        for edge_path in nx.all_simple_edge_paths(graph, o, d)
    ]
    return sorted(routes, key=lambda route: route.links)


def route_nodes(net: Network, route: Route) -> List[str]:
    return route.nodes(net)
