from pathlib import Path

import click
from loguru import logger

from app.cli.common import build_config, parse_scenarios, scenarios_option, set_override, write_run_config
from app.services.synthgen import gen_dataset


@click.command("gen")
@click.option("--out-dir", type=click.Path(path_type=Path), default=None, help="Corpus directory")
@click.option("--clips-per-cell", type=int, default=None, help="Clips per (class, scenario) cell")
@click.option("--seed", type=int, default=None)
@scenarios_option
@click.pass_context
def gen(ctx, out_dir, clips_per_cell, seed, scenarios):
    """Generate the synthetic corpus and its manifest"""
    overrides = {}
    set_override(overrides, "synth.out_dir", str(out_dir) if out_dir else None)
    set_override(overrides, "synth.clips_per_cell", clips_per_cell)
    set_override(overrides, "synth.seed", seed)
    set_override(overrides, "data.scenarios", parse_scenarios(scenarios))
    config = build_config(ctx, overrides)

    manifest = gen_dataset(config, n_jobs=config.runtime.threads)
    write_run_config(config, config.synth.out_dir)
    logger.bind(manifest=str(manifest)).info("Corpus ready")
    click.echo(str(manifest))
