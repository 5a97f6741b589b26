import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import click

from app.core.config import settings
from app.core.exceptions import ConfigurationError
from app.schemas.config import RunConfig, load_run_config
from app.schemas.dataset import Scenario

RUN_CONFIG_FILE = "run_config.json"


def set_override(overrides: Dict[str, Any], dotted: str, value: Any) -> None:
    """Place `value` at a dotted path unless it is None (flag not given)"""
    if value is None:
        return
    *parents, leaf = dotted.split(".")
    node = overrides
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


def parse_scenarios(value: Optional[str]) -> Optional[List[str]]:
    """'S1,S3' -> ['S1', 'S3']"""
    if value is None:
        return None
    names = [v.strip() for v in value.split(",") if v.strip()]
    valid = {s.value for s in Scenario}
    unknown = [n for n in names if n not in valid]
    if unknown or not names:
        raise ConfigurationError(f"Invalid scenario subset {value!r}; choose from {', '.join(sorted(valid))}")
    return names


def build_config(ctx: click.Context, overrides: Dict[str, Any]) -> RunConfig:
    """Config file (--config, else RUN_CONFIG), then command flags on top"""
    options = ctx.find_root().obj or {}
    set_override(overrides, "runtime.threads", options.get("threads"))
    return load_run_config(options.get("config_path") or settings.RUN_CONFIG, overrides)


def write_run_config(config: RunConfig, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RUN_CONFIG_FILE
    path.write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True), encoding="utf-8")
    return path


scenarios_option = click.option(
    "--scenarios", default=None, help="Comma-separated scenario subset, e.g. S1 or S1,S2,S3"
)
manifest_option = click.option(
    "--manifest", type=click.Path(path_type=Path), default=None, help="Manifest CSV"
)
output_option = click.option(
    "--output-dir", type=click.Path(path_type=Path), default=None, help="Artifact directory"
)
