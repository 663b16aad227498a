import logging
from pathlib import Path

import click

from commands.common import echo_json, handle_errors, network_options, resolve_files
from models.assignment import Method, Objective
from services.classical_assignment import solve
from services.network_core import load_network
from utils.outputs import dumps, write_json

logger = logging.getLogger(__name__)


@click.command("solve")
@network_options
@click.option("--method", type=click.Choice([m.value for m in Method]), default="msa", show_default=True)
@click.option("--objective", type=click.Choice([o.value for o in Objective]), default="ue", show_default=True)
@click.option("--max-iters", type=int, default=10_000, show_default=True)
@click.option("--gap-tol", type=float, default=1e-4, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), help="Write the result JSON here")
@click.option("--history/--no-history", default=False, help="Keep per-iteration history in the output")
@handle_errors
def solve_command(network, net_file, trips_file, method, objective, max_iters, gap_tol, out, history):
    """Classical UE / SO assignment with MSA or Frank-Wolfe."""
    net, demand = load_network(*resolve_files(network, net_file, trips_file))
    result = solve(net, demand, Method(method), Objective(objective), max_iters, gap_tol, show_progress=True)
    payload = result.model_dump(mode="json", exclude=None if history else {"history"})
    if out is not None:
        write_json(out, payload)
        logger.info(f"Result written to {out}")
    else:
        echo_json(dumps(payload))
