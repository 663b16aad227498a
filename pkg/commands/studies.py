import logging
from pathlib import Path

import click
from pydantic import ValidationError

import config
from commands.common import (
    build_trainer_config,
    echo_json,
    handle_errors,
    network_options,
    resolve_files,
    trainer_options,
)
from models.experiment import DEFAULT_ARMS, ExperimentConfig
from services.errors import ConfigError
from services.experiments import run_braess_study, run_table3, run_table4
from utils.outputs import dumps

logger = logging.getLogger(__name__)


def _experiment(network, net_file, trips_file, out_dir, default_network, **fields) -> ExperimentConfig:
    net_file, trips_file = resolve_files(network or (None if net_file else default_network), net_file, trips_file)
    try:
        return ExperimentConfig(
            net_file=net_file,
            trips_file=trips_file,
            out_dir=out_dir or config.OUTPUT_DIR / default_network,
            **fields,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment settings: {e}")


@click.command("table3")
@network_options
@click.option("--max-iters", type=int, default=10_000, show_default=True)
@click.option("--gap-tol", type=float, default=1e-4, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None)
@handle_errors
def table3_command(network, net_file, trips_file, max_iters, gap_tol, out_dir):
    """UE/SO by MSA and Frank-Wolfe; writes table3.csv (default network: ow)."""
    cfg = _experiment(
        network, net_file, trips_file, out_dir, "ow",
        max_iters=max_iters, gap_tol=gap_tol, show_progress=True,
    )
    rows, _ = run_table3(cfg)
    echo_json(dumps(rows))


@click.command("table4")
@network_options
@click.option("--arms", default=",".join(DEFAULT_ARMS), show_default=True, help="Comma separated modes")
@trainer_options
@click.option("--max-iters", type=int, default=10_000, show_default=True)
@click.option("--gap-tol", type=float, default=1e-4, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None)
@handle_errors
def table4_command(network, net_file, trips_file, arms, max_iters, gap_tol, out_dir, **options):
    """Train every arm; writes table4.csv and a training curve per arm (default network: ow)."""
    trainer = build_trainer_config(options)
    cfg = _experiment(
        network, net_file, trips_file, out_dir, "ow",
        max_iters=max_iters, gap_tol=gap_tol, trainer=trainer,
        arms=[arm.strip() for arm in arms.split(",") if arm.strip()],
    )
    echo_json(dumps(run_table4(cfg)))


@click.command("braess")
@network_options
@trainer_options
@click.option("--max-iters", type=int, default=10_000, show_default=True)
@click.option("--gap-tol", type=float, default=1e-4, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None)
@handle_errors
def braess_command(network, net_file, trips_file, max_iters, gap_tol, out_dir, **options):
    """Braess walkthrough: trained route counts next to the UE references."""
    trainer = build_trainer_config(options)
    cfg = _experiment(
        network, net_file, trips_file, out_dir, "braess",
        max_iters=max_iters, gap_tol=gap_tol, trainer=trainer,
    )
    echo_json(dumps(run_braess_study(cfg)))
