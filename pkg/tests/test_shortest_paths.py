import numpy as np
import pytest

from models.network import AffineCost, Network, Route
from services.errors import NoPathError, StructuralError
from services.shortest_paths import (
    enumerate_routes,
    k_shortest_paths,
    route_cost,
    route_nodes,
    shortest_path,
)


def _random_network(rng, n_nodes):
    nodes = [str(i) for i in range(n_nodes)]
    links = []
    for tail in nodes:
        for head in nodes:
            if tail != head and rng.random() < 0.35:
                links.append(
                    {"id": len(links), "tail": tail, "head": head, "cost_fn": AffineCost(a=1, b=0)}
                )
    return Network(name="random", nodes=nodes, links=links)


def _random_cases(count=200, seed=11):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        net = _random_network(rng, int(rng.integers(2, 11)))
        costs = rng.integers(1, 10, size=net.num_links).astype(float).tolist()
        o, d = rng.choice(net.nodes, size=2, replace=False).tolist()
        yield net, costs, o, d


def test_braess_shortest_path_at_free_flow(braess):
    net, _ = braess
    route = shortest_path(net, [0, 50, 50, 0, 10], "A", "B")
    assert route.links == (0, 4, 3)
    assert route_nodes(net, route) == ["A", "C", "D", "B"]
    assert route.label(net) == "ACDB"


def test_braess_shortest_path_with_explicit_costs(braess):
    net, _ = braess
    costs = [10, 50, 50, 10, 10]
    route = shortest_path(net, costs, "A", "B")
    assert route.links == (0, 4, 3)
    assert route_cost(route, costs) == 30.0


def test_braess_k_shortest_paths_are_ordered(braess):
    net, _ = braess
    costs = [10, 50, 50, 10, 10]
    routes = k_shortest_paths(net, costs, "A", "B", 5)
    assert [route_cost(r, costs) for r in routes] == [30.0, 60.0, 60.0]
    assert routes[0].links == (0, 4, 3)
    assert {r.links for r in routes[1:]} == {(0, 1), (2, 3)}


def test_enumerate_routes_on_braess(braess):
    net, _ = braess
    assert [r.links for r in enumerate_routes(net, "A", "B")] == [(0, 1), (0, 4, 3), (2, 3)]


def test_shortest_path_matches_enumeration_oracle():
    checked = 0
    for net, costs, o, d in _random_cases():
        routes = enumerate_routes(net, o, d)
        if not routes:
            with pytest.raises(NoPathError):
                shortest_path(net, costs, o, d)
            continue
        best = min(route_cost(r, costs) for r in routes)
        found = shortest_path(net, costs, o, d)
        assert route_cost(found, costs) == best
        assert found.links in {r.links for r in routes}
        checked += 1
    assert checked > 50


def test_k_shortest_paths_match_enumeration_oracle():
    for net, costs, o, d in _random_cases():
        routes = enumerate_routes(net, o, d)
        k = 4
        found = k_shortest_paths(net, costs, o, d, k)
        expected = sorted(route_cost(r, costs) for r in routes)[:k]
        assert [route_cost(r, costs) for r in found] == expected
        assert len({r.links for r in found}) == len(found)
        valid = {r.links for r in routes}
        assert all(r.links in valid for r in found)


def test_k_must_be_positive(braess):
    net, _ = braess
    with pytest.raises(StructuralError):
        k_shortest_paths(net, [1] * 5, "A", "B", 0)


def test_unreachable_pair(braess):
    net, _ = braess
    assert k_shortest_paths(net, [1] * 5, "B", "A", 3) == []
    with pytest.raises(NoPathError):
        shortest_path(net, [1] * 5, "B", "A")
    with pytest.raises(NoPathError):
        shortest_path(net, [1] * 5, "A", "Z")


def test_route_cost_sums_link_costs():
    route = Route(od=("A", "B"), links=(0, 2))
    assert route_cost(route, [1.5, 100.0, 2.5]) == 4.0
