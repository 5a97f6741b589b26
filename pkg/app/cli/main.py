from pathlib import Path

import click

from app.cli.commands import ablate, analyze, evaluate, gen, train
from app.core.logging import logger_manager


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="TOML run configuration")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker threads; results do not depend on this")
@click.option("--log-level", default=None, help="Override LOG_LEVEL")
@click.pass_context
def cli(ctx, config_path, threads, log_level):
    """Trainable Gabor filterbank vessel-audio classifier"""
    logger_manager.setup_logging(log_level)
    ctx.ensure_object(dict)
    ctx.obj.update(config_path=config_path, threads=threads, log_level=log_level)


# Register command modules
cli.add_command(gen.gen)
cli.add_command(train.train)
cli.add_command(evaluate.evaluate)
cli.add_command(ablate.ablate)
cli.add_command(analyze.analyze)
