import click
import numpy as np

from commands.common import handle_errors, network_options, resolve_files
from services.errors import NoPathError
from services.network_core import link_times, load_network
from services.shortest_paths import k_shortest_paths, route_cost


@click.command("ksp")
@network_options
@click.option("--origin", "-o", required=True)
@click.option("--destination", "-d", required=True)
@click.option("-k", "k", type=int, default=3, show_default=True)
@handle_errors
def ksp_command(network, net_file, trips_file, origin, destination, k):
    """Print the K shortest loopless routes at free-flow times."""
    net, _ = load_network(*resolve_files(network, net_file, trips_file))
    costs = link_times(net, np.zeros(net.num_links))
    routes = k_shortest_paths(net, costs, origin, destination, k)
    if not routes:
        raise NoPathError(f"No route from '{origin}' to '{destination}' in network '{net.name}'")
    for rank, route in enumerate(routes, start=1):
        click.echo(f"{rank}\t{route_cost(route, costs):.4f}\t{' -> '.join(route.nodes(net))}")
