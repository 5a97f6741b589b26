#!/usr/bin/env python3
"""Compare analytic gradients of every learnable parameter with central differences"""

import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from app.models.classifier import VesselClassifier  # noqa: E402
from app.models.head import cross_entropy  # noqa: E402
from app.schemas.config import load_run_config  # noqa: E402
from app.schemas.dataset import CtdsvStats  # noqa: E402


def small_config(pooling: str, use_ctdsv: bool):
    return load_run_config(overrides={
        "frontend": {"sample_rate": 16000, "clip_seconds": 1000 / 16000, "n_filters": 4, "kernel_width": 31,
                     "hop_ms": 0.625, "window_ms": 2.0},
        "encoder": {"channels": [4, 8], "pooling": pooling, "attention_dim": 8},
        "head": {"use_ctdsv": use_ctdsv},
        "training": {"precision": "float64"},
    })


def check(pooling: str, use_ctdsv: bool, step: float, seed: int) -> pd.DataFrame:
    config = small_config(pooling, use_ctdsv)
    rng = np.random.default_rng(seed)
    stats = CtdsvStats(mean=[0.0] * 5, std=[1.0] * 5)
    model = VesselClassifier.initialize(config, seed=seed, ctdsv_stats=stats)
    x = rng.uniform(-0.5, 0.5, (2, config.frontend.n_samples))
    ctdsv = rng.standard_normal((2, 5))
    labels = np.array([0, 3])

    def loss() -> float:
        logits, _ = model.forward(x, ctdsv, mode="train")
        return float(np.mean(cross_entropy(logits, labels)[0]))

    _, grads, _ = model.loss_and_grads(x, ctdsv, labels)
    rows = []
    for name, value in model.parameters().items():
        worst = 0.0
        for i in np.ndindex(value.shape):
            original = value[i]
            value[i] = original + step
            up = loss()
            value[i] = original - step
            down = loss()
            value[i] = original
            numeric = (up - down) / (2 * step)
            analytic = grads[name][i]
            worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8))
        rows.append({"pooling": pooling, "use_ctdsv": use_ctdsv, "parameter": name,
                     "size": value.size, "max_rel_error": worst})
    return pd.DataFrame(rows)


@click.command()
@click.option("--step", default=1e-5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--tolerance", default=1e-3, show_default=True)
def main(step, seed, tolerance):
    report = pd.concat(
        [check(p, c, step, seed) for p in ("attention", "max") for c in (True, False)],
        ignore_index=True,
    )
    click.echo(report.to_string(index=False))
    failed = report[report["max_rel_error"] >= tolerance]
    if len(failed):
        click.echo(f"{len(failed)} parameter(s) above tolerance {tolerance}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
