from pathlib import Path

import click

from commands.common import echo_json, handle_errors, network_options, resolve_files
from services.experiments import msa_baselines
from services.msa_guided_trainer import evaluate, load_policy
from services.network_core import load_network
from utils.outputs import dumps


@click.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(path_type=Path))
@network_options
@click.option("--arrival-seed", type=int, default=None, help="Defaults to the seed stored in the checkpoint")
@click.option("--baselines/--no-baselines", default=True, help="Compute UE/SO MSA baselines for the metrics")
@handle_errors
def eval_command(checkpoint, network, net_file, trips_file, arrival_seed, baselines):
    """Greedy rollout of a checkpoint; prints the evaluation report as JSON."""
    net, demand = load_network(*resolve_files(network, net_file, trips_file))
    policy = load_policy(checkpoint)
    reference = msa_baselines(net, demand)[0] if baselines else None
    report = evaluate(policy, net, demand, reference, arrival_seed)
    echo_json(dumps(report.model_dump()))
