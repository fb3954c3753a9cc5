import click

from cli.commands import cost, evaluate, generate, ingest, partition_cmd, rank, report, sweep, train_cmd


@click.group()
def cli():
    """Federated password-reuse risk prediction across website administrators."""


cli.add_command(generate)
cli.add_command(ingest)
cli.add_command(partition_cmd)
cli.add_command(train_cmd)
cli.add_command(evaluate)
cli.add_command(rank)
cli.add_command(report)
cli.add_command(cost)
cli.add_command(sweep)

if __name__ == "__main__":
    cli()
