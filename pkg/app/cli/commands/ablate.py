from pathlib import Path

import click
from loguru import logger

from app.cli.commands.train import training_options, training_overrides
from app.cli.common import build_config, parse_scenarios, set_override, write_run_config
from app.services.ablation_service import AblationService, write_ablation

ABLATION_FILE = "ablation.csv"


@click.command("ablate")
@click.option("--seeds", default=None, help="Comma-separated training seeds, e.g. 0,1,2")
@click.option("--subsets", default=None, help="Scenario subsets separated by ';', e.g. 'S1;S2;S3;S1,S2,S3'")
@training_options
@click.pass_context
def ablate(ctx, seeds, subsets, **flags):
    """Pooling x CTDSV grid per scenario subset; writes median test accuracies"""
    overrides = training_overrides(**flags)
    if seeds is not None:
        set_override(overrides, "ablation.seeds", [int(s) for s in seeds.split(",") if s.strip()])
    if subsets is not None:
        set_override(overrides, "ablation.scenario_subsets", [parse_scenarios(s) for s in subsets.split(";")])
    config = build_config(ctx, overrides)
    out_dir = Path(config.output_dir)
    write_run_config(config, out_dir)

    table = AblationService(config).run()
    path = write_ablation(table, out_dir / ABLATION_FILE)
    logger.bind(path=str(path), rows=len(table)).info("Ablation complete")
    click.echo(str(path))
