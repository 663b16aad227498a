import functools
import logging
import sys
from pathlib import Path
from typing import Tuple

import click
from pydantic import ValidationError

import config
from models.training import TrainerConfig
from services.errors import ConfigError, TrafficAssignmentError

logger = logging.getLogger(__name__)


def network_options(fn):
    """--network NAME for bundled data, or --net/--trips for explicit files."""
    fn = click.option("--trips", "trips_file", type=click.Path(path_type=Path), help="Trips file")(fn)
    fn = click.option("--net", "net_file", type=click.Path(path_type=Path), help="Link file")(fn)
    fn = click.option(
        "--network",
        "network",
        type=click.Choice(sorted(config.BUNDLED_NETWORKS)),
        help="Bundled network (overridden by --net/--trips)",
    )(fn)
    return fn


def resolve_files(network: str, net_file: Path, trips_file: Path) -> Tuple[Path, Path]:
    if net_file is not None or trips_file is not None:
        if net_file is None or trips_file is None:
            raise ConfigError("--net and --trips must be given together")
        return net_file, trips_file
    if network is None:
        raise ConfigError("Give --network or both --net and --trips")
    return config.bundled_files(network)


def handle_errors(fn):
    """Turn domain errors into their exit codes; anything else propagates."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TrafficAssignmentError as e:
            logger.error(f"{type(e).__name__}: {e.detail}")
            click.echo(f"Error: {e.detail}", err=True)
            sys.exit(e.exit_code)

    return wrapper


def echo_json(data: bytes) -> None:
    click.echo(data.decode("utf-8"))


_TRAINER_OPTIONS = [
    click.option("--episodes", type=int, default=3000, show_default=True),
    click.option("--seed", type=int, default=None, help="Base seed (default TA_BASE_SEED)"),
    click.option("--k-max", type=int, default=20, show_default=True),
    click.option("--hidden", default="512,256", show_default=True, help="Hidden layer widths"),
    click.option("--batch-size", type=int, default=128, show_default=True),
    click.option("--lr", "learning_rate", type=float, default=2e-5, show_default=True),
    click.option("--gamma", type=float, default=0.95, show_default=True),
    click.option("--buffer", "buffer_capacity", type=int, default=100_000, show_default=True),
    click.option("--warmup", type=int, default=2000, show_default=True),
    click.option("--target-sync", type=int, default=1000, show_default=True),
    click.option("--target", type=click.Choice(["double", "vanilla"]), default="double", show_default=True),
    click.option("--guidance", type=click.Choice(["msa", "uniform"]), default="msa", show_default=True),
    click.option("--guide-costs", type=click.Choice(["so", "ue"]), default="so", show_default=True),
    click.option("--grow-routes/--no-grow-routes", default=True, show_default=True),
    click.option("--marginal-eval", type=click.Choice(["post", "pre"]), default="post", show_default=True),
    click.option("--train-every", type=int, default=1, show_default=True),
    click.option("--eval-every", type=int, default=0, show_default=True),
    click.option("--log-every", type=int, default=100, show_default=True),
]

TRAINER_KEYS = (
    "episodes",
    "seed",
    "k_max",
    "hidden",
    "batch_size",
    "learning_rate",
    "gamma",
    "buffer_capacity",
    "warmup",
    "target_sync",
    "target",
    "guidance",
    "guide_costs",
    "grow_routes",
    "marginal_eval",
    "train_every",
    "eval_every",
    "log_every",
)


def trainer_options(fn):
    for option in reversed(_TRAINER_OPTIONS):
        fn = option(fn)
    return fn


def build_trainer_config(options: dict, show_progress: bool = True) -> TrainerConfig:
    """TrainerConfig from parsed CLI options; pops the trainer keys out of options."""
    values = {key: options.pop(key) for key in TRAINER_KEYS}
    hidden = values.pop("hidden")
    try:
        values["hidden_sizes"] = [int(width) for width in hidden.split(",") if width.strip()]
    except ValueError:
        raise ConfigError(f"--hidden must be comma separated integers, got '{hidden}'")
    if values["seed"] is None:
        values["seed"] = config.BASE_SEED
    try:
        return TrainerConfig(**values, show_progress=show_progress)
    except ValidationError as e:
        raise ConfigError(f"Invalid trainer settings: {e}")
