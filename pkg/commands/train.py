import logging
from pathlib import Path

import click

import config
from commands.common import (
    build_trainer_config,
    echo_json,
    handle_errors,
    network_options,
    resolve_files,
    trainer_options,
)
from models.training import TrainMode
from services.experiments import msa_baselines, train_arm
from services.network_core import load_network
from utils.outputs import dumps

logger = logging.getLogger(__name__)


@click.command("train")
@network_options
@click.option("--mode", default="msa-guided", show_default=True, help="msa-guided, ksp:K, so-routes or all-routes")
@trainer_options
@click.option("--max-iters", type=int, default=10_000, show_default=True, help="Baseline solver limit")
@click.option("--gap-tol", type=float, default=1e-4, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None, help="Run directory")
@handle_errors
def train_command(network, net_file, trips_file, mode, max_iters, gap_tol, out_dir, **options):
    """Train a route-recommendation policy; writes curve.csv, checkpoint.bin and summary.json."""
    trainer = build_trainer_config(options)
    mode = TrainMode.parse(mode)
    net, demand = load_network(*resolve_files(network, net_file, trips_file))
    out_dir = out_dir or config.OUTPUT_DIR / f"{net.name}-{mode.label.lower().replace(' ', '-')}"

    baselines, so_result = msa_baselines(net, demand, max_iters, gap_tol)
    _, _, report = train_arm(
        net, demand, mode, trainer, so_result=so_result, baselines=baselines, out_dir=out_dir
    )
    logger.info(f"Run written to {out_dir}")
    echo_json(dumps(report.model_dump()))
