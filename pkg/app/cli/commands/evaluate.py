import json
from pathlib import Path

import click
from loguru import logger

from app.cli.commands.train import CHECKPOINT_FILE, training_options, training_overrides
from app.cli.common import build_config, write_run_config
from app.core.checkpoint import load_checkpoint
from app.schemas.dataset import Split
from app.services.dataio import load_split
from app.services.training_service import TrainingService

METRICS_FILE = "metrics.json"


def checkpoint_option(command):
    return click.option(
        "--checkpoint", type=click.Path(path_type=Path), default=None,
        help=f"Model checkpoint (default: <output-dir>/{CHECKPOINT_FILE})",
    )(command)


def resolve_checkpoint(checkpoint, config) -> Path:
    return Path(checkpoint) if checkpoint else Path(config.output_dir) / CHECKPOINT_FILE


@click.command("eval")
@checkpoint_option
@training_options
@click.pass_context
def evaluate(ctx, checkpoint, **flags):
    """Evaluate a checkpoint on the test split; writes metrics.json"""
    config = build_config(ctx, training_overrides(**flags))
    model = load_checkpoint(resolve_checkpoint(checkpoint, config), expected_config=config)
    model.config = model.config.model_copy(update={"runtime": config.runtime})
    model.frontend.n_jobs = config.runtime.threads

    service = TrainingService(config)
    test = service.load_dataset().split(Split.TEST)
    test_set = load_split(test, config.frontend.sample_rate, config.frontend.n_samples, n_jobs=config.runtime.threads)
    metrics = service.evaluate(model, test_set)

    out_dir = Path(config.output_dir)
    write_run_config(config, out_dir)
    payload = {
        "accuracy": metrics.accuracy,
        "per_class": {k: v.model_dump() for k, v in metrics.per_class.items()},
        "confusion": metrics.confusion,
        "per_scenario": metrics.per_scenario,
        "config": config.model_dump(mode="json"),
    }
    path = out_dir / METRICS_FILE
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    logger.bind(accuracy=metrics.accuracy, per_scenario=metrics.per_scenario).info("Evaluation complete")
    click.echo(json.dumps({"accuracy": metrics.accuracy, "per_scenario": metrics.per_scenario}))
