import numpy as np
import pytest

from models.network import AffineCost, BPRCost, DemandTable, Network
from services.errors import (
    DataFileError,
    DomainError,
    NetworkValidationError,
    StructuralError,
)
from services.network_core import (
    beckmann_objective,
    link_time,
    link_time_integral,
    link_time_slopes,
    link_times,
    load_network,
    marginal_link_time,
    marginal_link_time_slopes,
    marginal_link_times,
    save_network,
    total_system_travel_time,
)

BPR = BPRCost(t0=10.0, capacity=100.0)


def test_bpr_time_at_capacity():
    assert link_time(BPR, 100.0) == pytest.approx(11.5)
    assert link_time(BPR, 0.0) == 10.0


def test_bpr_marginal_at_capacity():
    # t0 * (1 + alpha * (beta + 1))
    assert marginal_link_time(BPR, 100.0) == pytest.approx(17.5)


def test_affine_time_and_marginal():
    fn = AffineCost(a=50.0, b=1.0)
    assert link_time(fn, 3.0) == 53.0
    assert marginal_link_time(fn, 3.0) == 56.0
    assert link_time_integral(fn, 4.0) == pytest.approx(50.0 * 4 + 0.5 * 16)


def test_marginal_is_derivative_of_total_link_cost():
    h = 1e-5
    for x in (0.0, 37.0, 150.0, 400.0):
        numeric = ((x + h) * link_time(BPR, x + h) - max(x - h, 0.0) * link_time(BPR, max(x - h, 0.0))) / (
            (x + h) - max(x - h, 0.0)
        )
        assert marginal_link_time(BPR, x) == pytest.approx(numeric, rel=1e-5)


def test_bpr_integral_matches_quadrature():
    x = 250.0
    grid = np.linspace(0.0, x, 20001)
    values = [link_time(BPR, v) for v in grid]
    assert link_time_integral(BPR, x) == pytest.approx(np.trapezoid(values, grid), rel=1e-6)


def test_negative_flow_is_a_domain_error():
    with pytest.raises(DomainError):
        link_time(BPR, -1.0)
    with pytest.raises(DomainError):
        marginal_link_time(AffineCost(a=1.0, b=1.0), -0.5)


def test_braess_zero_flow_costs(braess):
    net, _ = braess
    assert link_times(net, np.zeros(5)).tolist() == [0.0, 50.0, 50.0, 0.0, 10.0]
    assert marginal_link_times(net, np.zeros(5)).tolist() == [0.0, 50.0, 50.0, 0.0, 10.0]


def test_braess_tstt_at_system_optimum_and_equilibrium(braess):
    net, _ = braess
    assert total_system_travel_time(net, [3, 3, 3, 3, 0]) == pytest.approx(498.0)
    assert total_system_travel_time(net, [4, 2, 2, 4, 2]) == pytest.approx(552.0)
    assert total_system_travel_time(net, np.zeros(5)) == 0.0


def test_vectorized_times_agree_with_scalar(ow):
    net, _ = ow
    rng = np.random.default_rng(3)
    flows = rng.uniform(0, 800, size=net.num_links)
    expected = [link_time(link.cost_fn, flows[link.id]) for link in net.links]
    marginal = [marginal_link_time(link.cost_fn, flows[link.id]) for link in net.links]
    np.testing.assert_allclose(link_times(net, flows), expected, rtol=1e-12)
    np.testing.assert_allclose(marginal_link_times(net, flows), marginal, rtol=1e-12)


def test_beckmann_objective_sums_integrals(braess):
    net, _ = braess
    flows = [4, 2, 2, 4, 2]
    expected = sum(link_time_integral(link.cost_fn, flows[link.id]) for link in net.links)
    assert beckmann_objective(net, flows) == pytest.approx(expected)


def test_flow_vector_shape_and_sign_are_checked(braess):
    net, _ = braess
    with pytest.raises(StructuralError):
        total_system_travel_time(net, [1, 2, 3])
    with pytest.raises(DomainError):
        total_system_travel_time(net, [1, 2, 3, 4, -5])


def test_bundled_networks_load(braess, ow):
    net, demand = braess
    assert net.nodes == ["A", "C", "B", "D"]
    assert net.num_links == 5
    assert demand.od_pairs == [("A", "B")]
    assert demand.total == 6

    ow_net, ow_demand = ow
    assert len(ow_net.nodes) == 13
    assert ow_net.num_links == 48
    assert ow_demand.total == 1700
    pairs = {(link.tail, link.head) for link in ow_net.links}
    assert all((head, tail) in pairs for tail, head in pairs)
    assert {od: ow_demand.demand_of(od) for od in ow_demand.od_pairs} == {
        ("1", "12"): 600.0,
        ("1", "13"): 400.0,
        ("2", "12"): 300.0,
        ("2", "13"): 400.0,
    }


def test_missing_file_names_the_path(tmp_path):
    missing = tmp_path / "nowhere.net"
    with pytest.raises(DataFileError) as excinfo:
        load_network(missing, tmp_path / "nowhere.trips")
    assert str(missing) in excinfo.value.detail
    assert excinfo.value.exit_code == 2


def test_malformed_record_reports_line(tmp_path):
    net_file = tmp_path / "bad.net"
    net_file.write_text("~ header\nA B affine 1 1 ;\nB C affine 1\n")
    trips = tmp_path / "bad.trips"
    trips.write_text("Origin A\n C : 1;\n")
    with pytest.raises(DataFileError) as excinfo:
        load_network(net_file, trips)
    assert f"{net_file}:3:" in excinfo.value.detail


def test_duplicate_link_is_rejected(tmp_path):
    net_file = tmp_path / "dup.net"
    net_file.write_text("A B affine 1 1 ;\nA B 100 5 ;\n")
    trips = tmp_path / "dup.trips"
    trips.write_text("Origin A\n B : 1;\n")
    with pytest.raises(NetworkValidationError):
        load_network(net_file, trips)


def test_unreachable_destination_is_rejected(tmp_path):
    net_file = tmp_path / "cut.net"
    net_file.write_text("A B affine 1 1 ;\nC B affine 1 1 ;\n")
    trips = tmp_path / "cut.trips"
    trips.write_text("Origin A\n C : 2;\n")
    with pytest.raises(NetworkValidationError):
        load_network(net_file, trips)


def test_self_loop_is_rejected():
    with pytest.raises(NetworkValidationError):
        Network(
            name="loop",
            nodes=["A"],
            links=[{"id": 0, "tail": "A", "head": "A", "cost_fn": AffineCost(a=1, b=1)}],
        )


def test_demand_with_identical_endpoints_is_rejected():
    with pytest.raises(NetworkValidationError):
        DemandTable(entries=[{"origin": "A", "destination": "A", "demand": 1}])


def test_save_network_reproduces_the_data(tmp_path, ow):
    net, demand = ow
    save_network(net, demand, tmp_path / "ow.net", tmp_path / "ow.trips")
    again, again_demand = load_network(tmp_path / "ow.net", tmp_path / "ow.trips")
    assert again.links == net.links
    assert again_demand.entries == demand.entries


def test_without_links_matches_bundled_four_link_variant(braess, braess4):
    net, _ = braess
    four, _ = braess4
    reduced = net.without_links([4], name="braess4")
    assert reduced.links == four.links
    assert reduced.num_links == 4


def _random_cost_functions(seed, count=40):
    rng = np.random.default_rng(seed)
    functions = []
    for _ in range(count):
        functions.append(
            BPRCost(
                t0=rng.uniform(1.0, 30.0),
                capacity=rng.uniform(50.0, 2000.0),
                alpha=rng.uniform(0.0, 1.0),
                beta=rng.uniform(1.0, 6.0),
            )
        )
        functions.append(AffineCost(a=rng.uniform(0.0, 60.0), b=rng.uniform(0.0, 10.0)))
    return functions


def test_link_time_is_monotone_and_marginal_dominates():
    grid = np.concatenate([[0.0], np.sort(np.random.default_rng(8).uniform(0.0, 5000.0, size=60))])
    for fn in _random_cost_functions(7):
        times = [link_time(fn, x) for x in grid]
        assert all(a <= b for a, b in zip(times, times[1:])), fn
        assert all(marginal_link_time(fn, x) >= t for x, t in zip(grid, times)), fn


def _five_point_derivative(f, x, h):
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def test_externality_equals_flow_times_slope_for_random_bpr():
    rng = np.random.default_rng(12)
    for _ in range(40):
        fn = BPRCost(
            t0=rng.uniform(1.0, 30.0),
            capacity=rng.uniform(50.0, 2000.0),
            alpha=rng.uniform(0.15, 1.0),
            beta=rng.uniform(1.0, 5.0),
        )
        for x in rng.uniform(0.5, 3.0, size=5) * fn.capacity:
            slope = _five_point_derivative(lambda v: link_time(fn, v), x, 1e-3 * x)
            externality = marginal_link_time(fn, x) - link_time(fn, x)
            assert externality == pytest.approx(x * slope, rel=1e-6), (fn, x)


def test_vectorized_slopes_match_finite_differences(ow):
    net, _ = ow
    flows = np.random.default_rng(5).uniform(50.0, 900.0, size=net.num_links)
    h = 1e-3 * flows
    numeric = _five_point_derivative(lambda v: link_times(net, v), flows, h)
    np.testing.assert_allclose(link_time_slopes(net, flows), numeric, rtol=1e-6)
    numeric = _five_point_derivative(lambda v: marginal_link_times(net, v), flows, h)
    np.testing.assert_allclose(marginal_link_time_slopes(net, flows), numeric, rtol=1e-6)


def test_affine_slopes_are_constant(braess):
    net, _ = braess
    assert link_time_slopes(net, [3, 3, 3, 3, 0]).tolist() == [10.0, 1.0, 1.0, 10.0, 1.0]
    assert marginal_link_time_slopes(net, np.zeros(5)).tolist() == [20.0, 2.0, 2.0, 20.0, 2.0]


def test_tstt_is_bit_identical_under_link_permutation(ow):
    net, _ = ow
    rng = np.random.default_rng(21)
    flows = rng.uniform(0.0, 900.0, size=net.num_links)
    order = rng.permutation(net.num_links)
    shuffled = Network(
        name="ow-shuffled",
        nodes=list(reversed(net.nodes)),
        links=[
            {"id": i, "tail": net.links[j].tail, "head": net.links[j].head, "cost_fn": net.links[j].cost_fn}
            for i, j in enumerate(order)
        ],
    )
    assert total_system_travel_time(shuffled, flows[order]) == total_system_travel_time(net, flows)
    assert beckmann_objective(shuffled, flows[order]) == beckmann_objective(net, flows)
