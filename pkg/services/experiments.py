"""Benchmark studies: classical baselines, RL arms and the Braess walkthrough."""

import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import config
from models.assignment import AssignmentResult, Method, Objective
from models.experiment import ExperimentConfig
from models.network import DemandTable, Network
from models.training import (
    Baselines,
    EvaluationReport,
    TrainerConfig,
    TrainLog,
    TrainMode,
    od_key,
)
from services.classical_assignment import solve
from services.errors import ConvergenceError
from services.msa_guided_trainer import (
    TrainedPolicy,
    build_initial_route_sets,
    evaluate,
    save_policy,
    train,
)
from services.network_core import load_network
from services.sequential_env import EpisodeSpec
from services.shortest_paths import enumerate_routes
from utils.outputs import write_csv, write_json

logger = logging.getLogger(__name__)

TABLE3_COLUMNS = ["method", "tstt", "iterations", "relative_gap"]
TABLE4_COLUMNS = ["method", "tstt", "improvement_over_ue", "gap_to_so"]
CURVE_COLUMNS = ["episode", "tstt", "loss", "epsilon", "greedy_tstt"]
BRAESS_TSTT_TOLERANCE = 1e-3

TABLE3_RUNS = [
    (Objective.UE, Method.MSA),
    (Objective.SO, Method.MSA),
    (Objective.UE, Method.FW),
    (Objective.SO, Method.FW),
]


def method_name(obj: Objective, method: Method) -> str:
    return f"{obj.value.upper()}-{method.value.upper()}"


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def run_table3(cfg: ExperimentConfig) -> Tuple[List[dict], Dict[str, AssignmentResult]]:
    """UE/SO with MSA and Frank-Wolfe; writes table3.csv."""
    net, demand = load_network(cfg.net_file, cfg.trips_file)
    rows, results = [], {}
    for obj, method in TABLE3_RUNS:
        name = method_name(obj, method)
        result = solve(net, demand, method, obj, cfg.max_iters, cfg.gap_tol, cfg.show_progress)
        results[name] = result
        rows.append(
            {
                "method": name,
                "tstt": result.tstt,
                "iterations": result.iterations,
                "relative_gap": result.relative_gap,
            }
        )
    write_csv(Path(cfg.out_dir) / "table3.csv", TABLE3_COLUMNS, rows)
    return rows, results


def msa_baselines(
    net: Network, demand: DemandTable, max_iters: int = 10_000, gap_tol: float = 1e-4
) -> Tuple[Baselines, AssignmentResult]:
    """UE-MSA and SO-MSA TSTT; also returns the SO result for route-set extraction."""
    ue = solve(net, demand, Method.MSA, Objective.UE, max_iters, gap_tol)
    so = solve(net, demand, Method.MSA, Objective.SO, max_iters, gap_tol)
    return Baselines(ue_tstt=ue.tstt, so_tstt=so.tstt), so


def train_arm(
    net: Network,
    demand: DemandTable,
    mode: TrainMode,
    trainer: TrainerConfig,
    so_result: AssignmentResult = None,
    baselines: Baselines = None,
    route_sets=None,
    out_dir: Path = None,
) -> Tuple[TrainedPolicy, TrainLog, EvaluationReport]:
    """Train one action-set configuration, evaluate it greedily, optionally write its files."""
    if route_sets is None:
        route_sets = build_initial_route_sets(net, demand, mode, trainer.k_max, so_result)
    grow = trainer.grow_routes and mode.kind == "msa-guided"
    arm_config = trainer.model_copy(update={"grow_routes": grow})
    spec = EpisodeSpec(
        net=net,
        demand=demand,
        route_sets=route_sets,
        k_max=arm_config.k_max,
        marginal_eval=arm_config.marginal_eval,
    )
    policy, log = train(spec, arm_config, mode)
    report = evaluate(policy, net, demand, baselines)

    if out_dir is not None:
        out_dir = Path(out_dir)
        write_csv(out_dir / "curve.csv", CURVE_COLUMNS, log.curve_rows())
        save_policy(out_dir / "checkpoint.bin", policy)
        write_json(out_dir / "summary.json", _summary(net, mode, arm_config, policy, report))
    return policy, log, report


def _summary(
    net: Network,
    mode: TrainMode,
    trainer: TrainerConfig,
    policy: TrainedPolicy,
    report: EvaluationReport,
) -> dict:
    return {
        "network": net.name,
        "mode": str(mode),
        "label": mode.label,
        "base_seed": trainer.seed,
        "episodes": trainer.episodes,
        "final_tstt": report.tstt,
        "ue_tstt": report.ue_tstt,
        "so_tstt": report.so_tstt,
        "improvement_over_ue": report.improvement_over_ue,
        "gap_to_so": report.gap_to_so,
        "route_sets": {
            f"{od[0]}->{od[1]}": [route.label(net) for route in routes]
            for od, routes in policy.route_sets.items()
        },
        "route_counts": report.route_counts,
        "trainer_config": trainer.model_dump(),
    }


def run_table4(cfg: ExperimentConfig, baselines: Baselines = None) -> List[dict]:
    """Train every arm against this run's own MSA baselines; writes table4.csv and one curve per arm."""
    net, demand = load_network(cfg.net_file, cfg.trips_file)
    computed, so_result = msa_baselines(net, demand, cfg.max_iters, cfg.gap_tol)
    baselines = baselines or computed
    out_dir = Path(cfg.out_dir)

    rows = []
    for mode in cfg.modes():
        logger.info(f"Training arm {mode.label} on '{net.name}'")
        _, log, report = train_arm(
            net,
            demand,
            mode,
            cfg.trainer,
            so_result=so_result,
            baselines=baselines,
            out_dir=out_dir / _slug(mode.label),
        )
        write_csv(out_dir / f"curve_{_slug(mode.label)}.csv", CURVE_COLUMNS, log.curve_rows())
        rows.append(
            {
                "method": mode.label,
                "tstt": report.tstt,
                "improvement_over_ue": report.improvement_over_ue,
                "gap_to_so": report.gap_to_so,
            }
        )
    write_csv(out_dir / "table4.csv", TABLE4_COLUMNS, rows)
    write_json(
        out_dir / "baselines.json",
        {"ue_tstt": baselines.ue_tstt, "so_tstt": baselines.so_tstt, "base_seed": cfg.base_seed},
    )
    return rows


def braess_bridge_routes(net: Network, four_net: Network, od: Tuple[str, str]) -> List[str]:
    """Labels of the routes that exist only because of the bridge link."""
    without = {route.label(four_net) for route in enumerate_routes(four_net, *od)}
    return [route.label(net) for route in enumerate_routes(net, *od) if route.label(net) not in without]


def check_braess_outcome(record: dict, tolerance: float = BRAESS_TSTT_TOLERANCE) -> None:
    """Raise ConvergenceError unless bridge routes are empty and TSTT matches the SO baseline."""
    loaded = []
    for od, labels in record["bridge_routes"].items():
        counts = record["route_counts"].get(od, {})
        loaded += [f"{od} {label}={counts[label]}" for label in labels if counts.get(label, 0) > 0]
    if loaded:
        raise ConvergenceError(f"Bridge routes still carry travelers: {', '.join(loaded)}")
    if abs(record["tstt"] - record["so_tstt"]) > tolerance * record["so_tstt"]:
        raise ConvergenceError(
            f"Final TSTT {record['tstt']:.4f} differs from the SO baseline {record['so_tstt']:.4f}"
        )


def run_braess_study(cfg: ExperimentConfig, variant_dir: Optional[Path] = None) -> dict:
    """Train on the full Braess route set, write braess.json, then check the SO outcome."""
    net, demand = load_network(cfg.net_file, cfg.trips_file)
    baselines, _ = msa_baselines(net, demand, cfg.max_iters, cfg.gap_tol)
    mode = TrainMode(kind="all-routes")
    _, log, report = train_arm(
        net,
        demand,
        mode,
        cfg.trainer,
        baselines=baselines,
        out_dir=Path(cfg.out_dir),
    )

    variant_dir = Path(variant_dir or config.DATA_DIR)
    four_net, four_demand = load_network(variant_dir / "braess4.net", variant_dir / "braess4.trips")
    four_ue = solve(four_net, four_demand, Method.MSA, Objective.UE, cfg.max_iters, cfg.gap_tol)

    travelers = demand.total
    record = {
        "network": net.name,
        "label": mode.label,
        "route_counts": report.route_counts,
        "tstt": report.tstt,
        "so_tstt": baselines.so_tstt,
        "ue_tstt": baselines.ue_tstt,
        "ue_route_cost": baselines.ue_tstt / travelers,
        "four_link_ue_tstt": four_ue.tstt,
        "four_link_ue_route_cost": four_ue.tstt / four_demand.total,
        "episodes": len(log.records),
    }
    record["bridge_routes"] = {
        od_key(entry.od): braess_bridge_routes(net, four_net, entry.od)
        for entry in demand.entries
        if entry.demand > 0
    }
    record["unused_routes"] = [
        label
        for counts in report.route_counts.values()
        for label, count in counts.items()
        if count == 0
    ]
    write_json(Path(cfg.out_dir) / "braess.json", record)
    check_braess_outcome(record)
    logger.info(f"Braess study reached the system optimum: tstt={record['tstt']:.4f}")
    return record
