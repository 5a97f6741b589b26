from pathlib import Path

import click
from loguru import logger

from app.cli.commands.evaluate import checkpoint_option, resolve_checkpoint
from app.cli.commands.train import training_options, training_overrides
from app.cli.common import build_config, set_override, write_run_config
from app.core.checkpoint import load_checkpoint
from app.schemas.dataset import Split
from app.services.analysis_service import AnalysisService
from app.services.dataio import load_split
from app.services.training_service import TrainingService

ANALYSIS_DIR = "analysis"


@click.command("analyze")
@checkpoint_option
@click.option("--stage", type=click.Choice(["normalized", "pooled"]), default=None,
              help="Frontend stage the activations are taken from")
@click.option("--threshold", type=float, default=None, help="Active-filter threshold relative to max |delta|")
@click.option("--split", "split_name", type=click.Choice([s.value for s in Split]), default=None)
@training_options
@click.pass_context
def analyze(ctx, checkpoint, stage, threshold, split_name, **flags):
    """Class-contrast filter analysis per scenario; writes CSVs under <output-dir>/analysis"""
    overrides = training_overrides(**flags)
    set_override(overrides, "analysis.stage", stage)
    set_override(overrides, "analysis.threshold", threshold)
    set_override(overrides, "analysis.split", split_name)
    config = build_config(ctx, overrides)
    model = load_checkpoint(resolve_checkpoint(checkpoint, config), expected_config=config)
    model.frontend.n_jobs = config.runtime.threads

    dataset = TrainingService(config).load_dataset().split(config.analysis.split)
    split = load_split(dataset, config.frontend.sample_rate, config.frontend.n_samples, n_jobs=config.runtime.threads)
    out_dir = Path(config.output_dir) / ANALYSIS_DIR
    counts = AnalysisService(config.analysis).run(model, split, out_dir, clip_ids=list(dataset.frame["path"]))
    write_run_config(config, out_dir)
    logger.bind(output_dir=str(out_dir), active_filters=counts).info("Analysis complete")
    click.echo(str(out_dir))
