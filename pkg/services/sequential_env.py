"""Travelers arrive one at a time and are each recommended one route.

The environment keeps integer link volumes, encodes edge-level and OD-level
features for the learner, and pays the negative marginal route time as reward.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from models.network import OD, DemandTable, FlowState, Network, Route
from services.errors import ConfigError, InvalidActionError, StructuralError
from services.network_core import (
    link_times,
    marginal_link_time,
    marginal_link_times,
    total_system_travel_time,
)
from services.shortest_paths import route_cost
from utils.outputs import write_jsonl

logger = logging.getLogger(__name__)

MARGINAL_EVAL_MODES = ("post", "pre")
DEFAULT_K_MAX = 20


def _check_route(net: Network, route: Route) -> None:
    origin, destination = route.od
    if not route.links:
        raise StructuralError(f"Route for OD {route.od} has no links")
    visited = {origin}
    node = origin
    for link_id in route.links:
        if not 0 <= link_id < net.num_links:
            raise StructuralError(f"Route for OD {route.od} uses unknown link {link_id}")
        link = net.link(link_id)
        if link.tail != node:
            raise StructuralError(f"Route for OD {route.od} is not connected at link {link_id}")
        node = link.head
        if node in visited:
            raise StructuralError(f"Route for OD {route.od} revisits node '{node}'")
        visited.add(node)
    if node != destination:
        raise StructuralError(f"Route for OD {route.od} ends at '{node}'")


@dataclass
class EpisodeSpec:
    """Network, demand, per-OD action sets and the arrival order of one episode."""

    net: Network
    demand: DemandTable
    route_sets: Dict[OD, List[Route]]
    k_max: int = DEFAULT_K_MAX
    arrival_order: List[OD] = field(default_factory=list)
    marginal_eval: str = "post"
    time_scale: float = field(init=False)
    volume_scale: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.marginal_eval not in MARGINAL_EVAL_MODES:
            raise ConfigError(f"marginal_eval must be one of {MARGINAL_EVAL_MODES}")
        if self.k_max < 1:
            raise ConfigError(f"k_max must be at least 1, got {self.k_max}")
        if not self.demand.is_integral():
            raise ConfigError("Sequential assignment needs integer OD demands")
        self.route_sets = {tuple(od): list(routes) for od, routes in self.route_sets.items()}
        for entry in self.demand.entries:
            routes = self.route_sets.get(entry.od, [])
            if entry.demand > 0 and not routes:
                raise ConfigError(f"OD {entry.od} has demand but no candidate routes")
            if len(routes) > self.k_max:
                raise ConfigError(
                    f"OD {entry.od} has {len(routes)} routes, more than k_max={self.k_max}"
                )
            for route in routes:
                _check_route(self.net, route)

        free_flow = link_times(self.net, np.zeros(self.net.num_links)).tolist()
        longest = max(
            (route_cost(route, free_flow) for routes in self.route_sets.values() for route in routes),
            default=0.0,
        )
        self.time_scale = longest if longest > 0 else 1.0
        p = self.net.cost_arrays
        self.volume_scale = np.where(p.is_bpr, p.capacity, max(self.demand.total, 1.0))

        if not self.arrival_order:
            self.arrival_order = self.traveler_tags()
        self.check_arrivals()

    @property
    def od_pairs(self) -> List[OD]:
        return self.demand.od_pairs

    @property
    def n_travelers(self) -> int:
        return int(round(self.demand.total))

    @property
    def state_dim(self) -> int:
        return 3 * self.net.num_links + len(self.od_pairs) + self.k_max

    def traveler_tags(self) -> List[OD]:
        """One OD tag per traveler, in demand-table order."""
        tags = []
        for entry in self.demand.entries:
            tags.extend([entry.od] * int(round(entry.demand)))
        return tags

    def shuffle_arrivals(self, seed: int) -> List[OD]:
        """Seeded uniform shuffle of the traveler tags; becomes the arrival order."""
        tags = self.traveler_tags()
        rng = np.random.default_rng(seed)
        self.arrival_order = [tags[i] for i in rng.permutation(len(tags))]
        return self.arrival_order

    def check_arrivals(self) -> None:
        if len(self.arrival_order) != self.n_travelers:
            raise ConfigError(
                f"Arrival order has {len(self.arrival_order)} travelers, demand has "
                f"{self.n_travelers}"
            )
        counts = {}
        for od in self.arrival_order:
            counts[od] = counts.get(od, 0) + 1
        for entry in self.demand.entries:
            if counts.get(entry.od, 0) != int(round(entry.demand)):
                raise ConfigError(f"Arrival order does not match the demand of OD {entry.od}")


@dataclass
class EnvState:
    t: int
    volumes: np.ndarray
    current_od: Optional[OD]


@dataclass
class StateVector:
    features: np.ndarray
    mask: np.ndarray
    od: OD
    t: int


@dataclass
class StepOutcome:
    reward: float
    next_state: Optional[StateVector]
    terminal: bool
    action: int
    route: Route
    tstt: float


def route_marginal_time(
    net: Network, flows: FlowState, route: Route, marginal_eval: str = "post"
) -> float:
    """Marginal time of sending one more traveler down the route.

    post: links evaluated with the entering traveler included (v + 1).
    pre:  links evaluated at the current volume v.
    """
    offset = 1.0 if marginal_eval == "post" else 0.0
    total = 0.0
    for link_id in route.links:
        total += marginal_link_time(net.link(link_id).cost_fn, float(flows[link_id]) + offset)
    return total


def encode_state(spec: EpisodeSpec, env: EnvState) -> StateVector:
    """Edge block (time, volume, marginal per link) + OD one-hot + route marginals."""
    net = spec.net
    volumes = env.volumes
    offset = 1.0 if spec.marginal_eval == "post" else 0.0
    times = link_times(net, volumes)
    marginals = marginal_link_times(net, volumes + offset)
    edge_block = np.stack(
        [times / spec.time_scale, volumes / spec.volume_scale, marginals / spec.time_scale],
        axis=1,
    ).ravel()

    od_pairs = spec.od_pairs
    one_hot = np.zeros(len(od_pairs))
    one_hot[od_pairs.index(env.current_od)] = 1.0

    routes = spec.route_sets[env.current_od]
    mask = np.zeros(spec.k_max, dtype=bool)
    mask[: len(routes)] = True
    route_block = np.zeros(spec.k_max)
    marginal_list = marginals.tolist()
    for slot, route in enumerate(routes):
        route_block[slot] = route_cost(route, marginal_list) / spec.time_scale

    features = np.concatenate([edge_block, one_hot, route_block])
    return StateVector(features=features, mask=mask, od=env.current_od, t=env.t)


class RouteRecommendationEnv:
    """Single-threaded episode runner over an EpisodeSpec."""

    def __init__(self, spec: EpisodeSpec):
        self.spec = spec
        self.state: Optional[EnvState] = None
        self.assignments: List[tuple] = []
        self.trace: List[dict] = []

    def reset(self, arrival_order: List[OD] = None) -> StateVector:
        if arrival_order is not None:
            self.spec.arrival_order = list(arrival_order)
            self.spec.check_arrivals()
        if not self.spec.arrival_order:
            raise StructuralError("Episode has no travelers")
        self.state = EnvState(
            t=1,
            volumes=np.zeros(self.spec.net.num_links),
            current_od=self.spec.arrival_order[0],
        )
        self.assignments = []
        self.trace = []
        return encode_state(self.spec, self.state)

    def encode(self) -> StateVector:
        return encode_state(self.spec, self.state)

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.current_od is None

    def step(self, action: int) -> StepOutcome:
        if self.state is None or self.done:
            raise StructuralError("step() called on a finished or unstarted episode; call reset()")
        spec, state = self.spec, self.state
        od = state.current_od
        routes = spec.route_sets[od]
        if not 0 <= action < len(routes):
            raise InvalidActionError(
                f"Action {action} is masked for OD {od} ({len(routes)} valid routes)"
            )
        route = routes[action]
        marginal = route_marginal_time(spec.net, state.volumes, route, spec.marginal_eval)
        state.volumes[list(route.links)] += 1.0
        tstt = total_system_travel_time(spec.net, state.volumes)
        self.assignments.append((od, action))
        self.trace.append(
            {"t": state.t, "od": list(od), "action": action, "reward": -marginal, "tstt_so_far": tstt}
        )

        terminal = state.t >= spec.n_travelers
        state.t += 1
        if terminal:
            state.current_od = None
            next_state = None
        else:
            state.current_od = spec.arrival_order[state.t - 1]
            next_state = encode_state(spec, state)
        return StepOutcome(
            reward=-marginal,
            next_state=next_state,
            terminal=terminal,
            action=action,
            route=route,
            tstt=tstt,
        )

    def route_counts(self) -> Dict[OD, List[int]]:
        """Travelers assigned so far per OD and route slot."""
        counts = {od: [0] * len(routes) for od, routes in self.spec.route_sets.items()}
        for od, action in self.assignments:
            counts[od][action] += 1
        return counts

    def export_trace(self, path: Path) -> None:
        write_jsonl(path, self.trace)


@dataclass
class EpisodeResult:
    tstt: float
    volumes: np.ndarray
    rewards: List[float]
    route_counts: Dict[OD, List[int]]


def rollout(
    env: RouteRecommendationEnv,
    policy: Callable[[StateVector], int],
    arrival_order: List[OD] = None,
) -> EpisodeResult:
    """Run one full episode under a fixed policy."""
    state = env.reset(arrival_order)
    rewards = []
    while True:
        outcome = env.step(policy(state))
        rewards.append(outcome.reward)
        if outcome.terminal:
            break
        state = outcome.next_state
    return EpisodeResult(
        tstt=outcome.tstt,
        volumes=env.state.volumes.copy(),
        rewards=rewards,
        route_counts=env.route_counts(),
    )
