from pathlib import Path

import click
from loguru import logger

from app.cli.common import (
    build_config,
    manifest_option,
    output_option,
    parse_scenarios,
    scenarios_option,
    set_override,
    write_run_config,
)
from app.services.training_service import TrainingService, write_history

CHECKPOINT_FILE = "model.ckpt"
HISTORY_FILE = "history.csv"


def training_options(command):
    """Flags shared by every command that builds or loads a model"""
    options = [
        manifest_option,
        scenarios_option,
        output_option,
        click.option("--epochs", type=int, default=None),
        click.option("--lr", type=float, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--filters", "n_filters", type=int, default=None, help="Number of Gabor filters"),
        click.option("--pooling", type=click.Choice(["attention", "max"]), default=None),
        click.option("--ctdsv/--no-ctdsv", "use_ctdsv", default=None, help="Fuse CTDSV metadata"),
        click.option("--precision", type=click.Choice(["float32", "float64"]), default=None),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def training_overrides(manifest, scenarios, output_dir, epochs, lr, batch_size, seed,
                       n_filters, pooling, use_ctdsv, precision) -> dict:
    overrides = {}
    set_override(overrides, "data.manifest", str(manifest) if manifest else None)
    set_override(overrides, "data.scenarios", parse_scenarios(scenarios))
    set_override(overrides, "output_dir", str(output_dir) if output_dir else None)
    set_override(overrides, "training.epochs", epochs)
    set_override(overrides, "training.lr", lr)
    set_override(overrides, "training.batch_size", batch_size)
    set_override(overrides, "training.seed", seed)
    set_override(overrides, "frontend.n_filters", n_filters)
    set_override(overrides, "encoder.pooling", pooling)
    set_override(overrides, "head.use_ctdsv", use_ctdsv)
    set_override(overrides, "training.precision", precision)
    return overrides


@click.command("train")
@training_options
@click.pass_context
def train(ctx, **flags):
    """Train frontend and classifier jointly; writes checkpoint and history"""
    config = build_config(ctx, training_overrides(**flags))
    out_dir = Path(config.output_dir)
    write_run_config(config, out_dir)

    service = TrainingService(config)
    data = service.load_data()
    result = service.train(data.train, data.val, data.ctdsv_stats, checkpoint_path=out_dir / CHECKPOINT_FILE)
    write_history(result.history, out_dir / HISTORY_FILE)
    logger.bind(
        output_dir=str(out_dir),
        best_epoch=result.history.best_epoch,
        best_val_accuracy=result.history.best_val_accuracy,
    ).info("Training complete")
    click.echo(str(out_dir / CHECKPOINT_FILE))
