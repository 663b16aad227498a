import click

from commands.evaluate import eval_command
from commands.ksp import ksp_command
from commands.solve import solve_command
from commands.studies import braess_command, table3_command, table4_command
from commands.train import train_command
from config import setup_logging


@click.group()
def cli():
    """Sequential route recommendation for system-optimal traffic assignment."""
    setup_logging()


# Register commands
cli.add_command(solve_command)
cli.add_command(ksp_command)
cli.add_command(train_command)
cli.add_command(eval_command)
cli.add_command(table3_command)
cli.add_command(table4_command)
cli.add_command(braess_command)


if __name__ == "__main__":
    cli()
