"""Deep-Q training where exploration follows an MSA-averaged assignment distribution.

After every episode the distribution M is averaged with an all-or-nothing
target (step 1/i) computed at the episode's final volumes, and the target
route is appended to the OD's action set when it is new.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from models.assignment import AssignmentResult, Objective
from models.network import OD, DemandTable, FlowState, Network, Route
from models.training import (
    Baselines,
    EpisodeRecord,
    EvaluationReport,
    TrainerConfig,
    TrainLog,
    TrainMode,
    od_key,
)
from services.classical_assignment import effective_costs, extract_so_route_set
from services.dqn_agent import (
    DQNLearner,
    QNetwork,
    act_greedy,
    load_checkpoint,
    save_checkpoint,
)
from services.errors import ConfigError, StructuralError
from services.network_core import link_times
from services.sequential_env import EpisodeSpec, RouteRecommendationEnv, StateVector, rollout
from services.shortest_paths import enumerate_routes, k_shortest_paths, route_cost, shortest_path

logger = logging.getLogger(__name__)

_SUM_TOLERANCE = 1e-12


class AssignmentDistribution:
    """Per-OD probability vectors aligned with the route slots of each OD."""

    def __init__(self, probs: Dict[OD, np.ndarray]):
        self.probs = {tuple(od): np.asarray(p, dtype=float).copy() for od, p in probs.items()}
        self.check()

    @classmethod
    def uniform(cls, route_sets: Dict[OD, List[Route]]) -> "AssignmentDistribution":
        return cls({od: np.full(len(routes), 1.0 / len(routes)) for od, routes in route_sets.items()})

    def copy(self) -> "AssignmentDistribution":
        return AssignmentDistribution(self.probs)

    def of(self, od: OD) -> np.ndarray:
        try:
            return self.probs[tuple(od)]
        except KeyError:
            raise StructuralError(f"Assignment distribution has no entry for OD {od}")

    def sample(self, od: OD, rng: np.random.Generator) -> int:
        p = self.of(od)
        return int(rng.choice(len(p), p=p))

    def grow(self, od: OD) -> None:
        """New route slot with zero probability."""
        self.probs[tuple(od)] = np.append(self.of(od), 0.0)

    def average(self, targets: Dict[OD, int], i: int) -> None:
        """M <- (1 - 1/i) M + (1/i) point-mass(target slot)."""
        if i < 1:
            raise ConfigError(f"Averaging index must be at least 1, got {i}")
        step = 1.0 / i
        for od, slot in targets.items():
            point = np.zeros_like(self.of(od))
            point[slot] = 1.0
            self.probs[tuple(od)] = (1.0 - step) * self.probs[tuple(od)] + step * point
        self.check()

    def check(self) -> None:
        for od, p in self.probs.items():
            if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise StructuralError(f"Assignment distribution for OD {od} is not a distribution: {p}")
            # rounding drift
            if abs(p.sum() - 1.0) > _SUM_TOLERANCE:
                self.probs[od] = p / p.sum()

    def to_json(self) -> List[dict]:
        return [
            {"origin": od[0], "destination": od[1], "probs": p.tolist()}
            for od, p in self.probs.items()
        ]


def epsilon_at(episode: int, config: TrainerConfig) -> float:
    """Linear decay from epsilon_start to epsilon_end over the first decay fraction of episodes."""
    decay_episodes = max(1, int(round(config.epsilon_decay_fraction * config.episodes)))
    progress = min(1.0, (episode - 1) / decay_episodes)
    return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * progress


def msa_guided_select(
    q: QNetwork,
    s: StateVector,
    epsilon: float,
    m: AssignmentDistribution,
    rng: np.random.Generator,
    guidance: str = "msa",
) -> int:
    """Explore by sampling M (or uniformly over valid slots), otherwise act greedily."""
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError(f"epsilon must lie in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        if guidance == "msa":
            return m.sample(s.od, rng)
        return int(rng.integers(int(np.count_nonzero(s.mask))))
    return act_greedy(q, s)


def update_distribution(
    m: AssignmentDistribution,
    episode_flows: FlowState,
    net: Network,
    i: int,
    route_sets: Dict[OD, List[Route]],
    k_max: int,
    guide_costs: str = "so",
    grow_routes: bool = True,
) -> Tuple[AssignmentDistribution, Dict[OD, List[Route]]]:
    """Average M toward the all-or-nothing target at the episode's final volumes."""
    costs = effective_costs(net, np.asarray(episode_flows, dtype=float), Objective(guide_costs))
    m = m.copy()
    route_sets = {od: list(routes) for od, routes in route_sets.items()}
    targets = {}
    for od, routes in route_sets.items():
        best = shortest_path(net, costs, od[0], od[1])
        known = [route.links for route in routes]
        if best.links in known:
            targets[od] = known.index(best.links)
            continue
        if grow_routes and len(routes) < k_max:
            routes.append(best)
            m.grow(od)
            targets[od] = len(routes) - 1
            logger.debug(f"Episode {i}: OD {od} gains route {best.links} (slot {len(routes) - 1})")
            continue
        if grow_routes:
            logger.warning(
                f"Episode {i}: route set of OD {od} is full at k_max={k_max}; "
                f"discarding route {best.links}"
            )
        existing = [route_cost(route, costs) for route in routes]
        targets[od] = int(np.argmin(existing))
    m.average(targets, i)
    return m, route_sets


def build_initial_route_sets(
    net: Network,
    demand: DemandTable,
    mode: TrainMode,
    k_max: int,
    so_result: Optional[AssignmentResult] = None,
) -> Dict[OD, List[Route]]:
    """Starting action sets: free-flow shortest path, K free-flow shortest paths, SO routes or every route."""
    free_flow = link_times(net, np.zeros(net.num_links))
    od_pairs = [entry.od for entry in demand.entries if entry.demand > 0]

    if mode.kind == "msa-guided":
        return {od: [shortest_path(net, free_flow, od[0], od[1])] for od in od_pairs}

    if mode.kind == "ksp":
        if mode.k > k_max:
            raise ConfigError(f"ksp:{mode.k} needs k_max >= {mode.k}, got {k_max}")
        route_sets = {}
        for od in od_pairs:
            routes = k_shortest_paths(net, free_flow, od[0], od[1], mode.k)
            if not routes:
                raise ConfigError(f"OD {od} has no route for ksp:{mode.k}")
            route_sets[od] = routes
        return route_sets

    if mode.kind == "all-routes":
        route_sets = {}
        for od in od_pairs:
            routes = enumerate_routes(net, od[0], od[1])
            if len(routes) > k_max:
                raise ConfigError(
                    f"OD {od} has {len(routes)} routes; all-routes needs k_max >= {len(routes)}"
                )
            route_sets[od] = routes
        return route_sets

    if so_result is None:
        raise ConfigError("so-routes mode needs a system-optimal assignment result")
    route_sets = extract_so_route_set(so_result)
    for od, routes in route_sets.items():
        if len(routes) > k_max:
            logger.warning(f"OD {od} has {len(routes)} SO routes; keeping the {k_max} busiest")
            route_sets[od] = routes[:k_max]
    return route_sets


@dataclass
class TrainedPolicy:
    """Online network plus everything needed to replay it on the same data."""

    network: QNetwork
    route_sets: Dict[OD, List[Route]]
    time_scale: float
    config: TrainerConfig
    mode: str = "msa-guided"
    distribution: Optional[AssignmentDistribution] = None
    arrival_seed: int = 0
    rng: Optional[np.random.Generator] = None


def greedy_tstt(network: QNetwork, spec: EpisodeSpec, arrival_seed: int) -> float:
    env = RouteRecommendationEnv(spec)
    order = spec.shuffle_arrivals(arrival_seed)
    return rollout(env, lambda s: act_greedy(network, s), order).tstt


def train(
    spec: EpisodeSpec, config: TrainerConfig, mode: TrainMode = None
) -> Tuple[TrainedPolicy, TrainLog]:
    """Run config.episodes episodes; spec.route_sets grows in place when grow_routes is on."""
    mode = mode or TrainMode(kind="msa-guided")
    if spec.k_max != config.k_max:
        raise ConfigError(f"Episode k_max {spec.k_max} differs from trainer k_max {config.k_max}")
    learner = DQNLearner(spec.state_dim, config)
    m = AssignmentDistribution.uniform(spec.route_sets)
    env = RouteRecommendationEnv(spec)
    reward_scale = spec.time_scale if config.normalize_rewards else 1.0
    log = TrainLog()
    steps = 0

    logger.info(
        f"Training {mode.label} on '{spec.net.name}': {config.episodes} episodes, "
        f"{spec.n_travelers} travelers, state_dim={spec.state_dim}, seed={config.seed}"
    )
    for episode in tqdm(
        range(1, config.episodes + 1), desc=mode.label, disable=not config.show_progress
    ):
        epsilon = epsilon_at(episode, config)
        state = env.reset(spec.shuffle_arrivals(config.seed + episode))
        losses = []
        while True:
            action = msa_guided_select(learner.online, state, epsilon, m, learner.rng, config.guidance)
            outcome = env.step(action)
            next_state = outcome.next_state
            learner.buffer.add(
                state.features,
                state.mask,
                action,
                outcome.reward / reward_scale,
                None if next_state is None else next_state.features,
                None if next_state is None else next_state.mask,
                outcome.terminal,
            )
            steps += 1
            if learner.ready and steps % config.train_every == 0:
                losses.append(learner.train_step())
            if outcome.terminal:
                break
            state = next_state

        m, spec.route_sets = update_distribution(
            m,
            env.state.volumes,
            spec.net,
            episode,
            spec.route_sets,
            config.k_max,
            config.guide_costs,
            config.grow_routes,
        )
        greedy = None
        if config.eval_every and episode % config.eval_every == 0:
            greedy = greedy_tstt(learner.online, spec, config.seed)
        log.records.append(
            EpisodeRecord(
                episode=episode,
                total_travel_time=outcome.tstt,
                mean_loss=float(np.mean(losses)) if losses else None,
                epsilon=epsilon,
                routes_per_od={od_key(od): len(routes) for od, routes in spec.route_sets.items()},
                greedy_tstt=greedy,
            )
        )
        if episode % config.log_every == 0:
            logger.info(
                f"episode {episode}: tstt={outcome.tstt:.2f} epsilon={epsilon:.3f} "
                f"updates={learner.update_steps} buffer={len(learner.buffer)}"
            )

    policy = TrainedPolicy(
        network=learner.online,
        route_sets={od: list(routes) for od, routes in spec.route_sets.items()},
        time_scale=spec.time_scale,
        config=config,
        mode=str(mode),
        distribution=m,
        arrival_seed=config.seed,
        rng=learner.rng,
    )
    return policy, log


def _route_sets_to_json(route_sets: Dict[OD, List[Route]]) -> List[dict]:
    return [
        {"origin": od[0], "destination": od[1], "routes": [list(route.links) for route in routes]}
        for od, routes in route_sets.items()
    ]


def _route_sets_from_json(items: List[dict]) -> Dict[OD, List[Route]]:
    route_sets = {}
    for item in items:
        od = (item["origin"], item["destination"])
        route_sets[od] = [Route(od=od, links=tuple(links)) for links in item["routes"]]
    return route_sets


def save_policy(path: Path, policy: TrainedPolicy, rng: np.random.Generator = None) -> None:
    metadata = {
        "trainer_config": policy.config.model_dump(),
        "mode": policy.mode,
        "route_sets": _route_sets_to_json(policy.route_sets),
        "time_scale": policy.time_scale,
        "arrival_seed": policy.arrival_seed,
    }
    if policy.distribution is not None:
        metadata["distribution"] = policy.distribution.to_json()
    save_checkpoint(path, policy.network, metadata, rng if rng is not None else policy.rng)


def load_policy(path: Path) -> TrainedPolicy:
    network, meta = load_checkpoint(path)
    distribution = None
    if "distribution" in meta:
        distribution = AssignmentDistribution(
            {(item["origin"], item["destination"]): item["probs"] for item in meta["distribution"]}
        )
    return TrainedPolicy(
        network=network,
        route_sets=_route_sets_from_json(meta["route_sets"]),
        time_scale=meta["time_scale"],
        config=TrainerConfig(**meta["trainer_config"]),
        mode=meta.get("mode", "msa-guided"),
        distribution=distribution,
        arrival_seed=meta.get("arrival_seed", 0),
    )


def evaluate(
    policy: TrainedPolicy,
    net: Network,
    demand: DemandTable,
    baselines: Baselines = None,
    arrival_seed: int = None,
) -> EvaluationReport:
    """One greedy rollout of the policy on its own route sets."""
    state_dim = 3 * net.num_links + len(demand.entries) + policy.network.n_actions
    if policy.network.input_dim != state_dim or set(policy.route_sets) - set(demand.od_pairs):
        raise StructuralError(
            f"Checkpoint expects state_dim {policy.network.input_dim}, network '{net.name}' "
            f"with this demand gives {state_dim}"
        )
    spec = EpisodeSpec(
        net=net,
        demand=demand,
        route_sets=policy.route_sets,
        k_max=policy.network.n_actions,
        marginal_eval=policy.config.marginal_eval,
    )
    spec.time_scale = policy.time_scale
    seed = policy.arrival_seed if arrival_seed is None else arrival_seed
    env = RouteRecommendationEnv(spec)
    result = rollout(env, lambda s: act_greedy(policy.network, s), spec.shuffle_arrivals(seed))

    route_counts, route_shares = {}, {}
    for od, counts in result.route_counts.items():
        labels = [route.label(net) for route in spec.route_sets[od]]
        total = sum(counts)
        route_counts[od_key(od)] = dict(zip(labels, counts))
        route_shares[od_key(od)] = {
            label: (count / total if total else 0.0) for label, count in zip(labels, counts)
        }

    report = EvaluationReport(tstt=result.tstt, route_shares=route_shares, route_counts=route_counts)
    if baselines is not None:
        report.ue_tstt = baselines.ue_tstt
        report.so_tstt = baselines.so_tstt
        report.improvement_over_ue = improvement_over_ue(result.tstt, baselines.ue_tstt)
        report.gap_to_so = gap_to_so(result.tstt, baselines.so_tstt)
    logger.info(f"Greedy evaluation on '{net.name}': tstt={result.tstt:.4f}")
    return report


def improvement_over_ue(x: float, ue: float) -> float:
    return (ue - x) / ue


def gap_to_so(x: float, so: float) -> float:
    return (x - so) / so
