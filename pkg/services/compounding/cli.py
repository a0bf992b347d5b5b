"""
Command-line entry point for the compounding pipeline.

Usage:
    python cli.py --config pipeline.env simulate
    python cli.py train
    python cli.py --deterministic infer --split test
    python cli.py eval --with-reference
    python cli.py inspect-model --variant CID --height 338 --width 192
"""

import functools
import logging
import logging.config
import math
import os
import sys
from pathlib import Path
from typing import Dict, Optional

import typer
import yaml
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from config import Settings, load_settings
from errors import CidNetError
from schema.network import Variant
from schema.reports import MetricSummary
from services import pipeline

app = typer.Typer(help="Complex-valued compounding of diverging-wave ultrasound.", no_args_is_help=True, add_completion=False)
console = Console()
err_console = Console(stderr=True)


def _setup_logging(level: Optional[str]) -> None:
    cfg_path = os.path.join(os.path.dirname(__file__), "logging.yaml")
    if os.path.exists(cfg_path):
        try:
            with open(cfg_path, "r") as f:
                logging.config.dictConfig(yaml.safe_load(f))
        except (OSError, ValueError, yaml.YAMLError):
            logging.basicConfig(level=logging.INFO)
    else:
        logging.basicConfig(level=logging.INFO)
    if level:
        logging.getLogger("compounding").setLevel(level.upper())


def _guarded(func):
    """Turn pipeline failures into a one-line diagnostic and exit code 1."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ValidationError as exc:
            first = exc.errors()[0]
            where = ".".join(str(p) for p in first.get("loc", ()))
            err_console.print(f"error: invalid configuration {where}: {first.get('msg')}", soft_wrap=True)
        except (CidNetError, OSError) as exc:
            err_console.print(f"error: {type(exc).__name__}: {exc}", soft_wrap=True)
        raise typer.Exit(code=1)

    return wrapper


def _settings(ctx: typer.Context) -> Settings:
    return ctx.obj


def _with_variant(settings: Settings, variant: Optional[Variant]) -> Settings:
    if variant is None:
        return settings
    return settings.model_copy(update={"model": settings.model.model_copy(update={"variant": variant})})


def _fmt(value: float, digits: int = 3) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "-"
    return f"{value:.{digits}f}"


def _cell(summary: Optional[MetricSummary]) -> str:
    if summary is None or summary.count == 0:
        return "-"
    return f"{_fmt(summary.mean)} ± {_fmt(summary.std)}"


@app.callback()
@_guarded
def main(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="key=value pipeline file"),
    deterministic: bool = typer.Option(False, "--deterministic", help="single-threaded numerics"),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING"),
):
    _setup_logging(log_level)
    settings = load_settings(config)
    if log_level is None:
        logging.getLogger("compounding").setLevel(settings.log_level.upper())
    if deterministic:
        settings = settings.model_copy(
            update={
                "dataset": settings.dataset.model_copy(update={"workers": 1}),
                "trainer": settings.trainer.model_copy(update={"workers": 1}),
            }
        )
    ctx.obj = settings


@app.command()
@_guarded
def simulate(ctx: typer.Context):
    """Simulate, demodulate and beamform the synthetic dataset."""
    summary = pipeline.cmd_simulate(_settings(ctx))
    console.print(f"scenes written: {summary}")


@app.command()
@_guarded
def train(ctx: typer.Context, variant: Optional[Variant] = typer.Option(None, "--variant", case_sensitive=False)):
    """Train a network variant on the train/val splits."""
    paths = pipeline.cmd_train(_with_variant(_settings(ctx), variant))
    for path in paths:
        console.print(f"weights: {path}")


@app.command()
@_guarded
def infer(
    ctx: typer.Context,
    split: str = typer.Option("test", "--split"),
    weights: Optional[Path] = typer.Option(None, "--weights", help="archive overriding the model directory"),
    variant: Optional[Variant] = typer.Option(None, "--variant", case_sensitive=False),
):
    """Reconstruct a split with trained weights."""
    count = pipeline.cmd_infer(_with_variant(_settings(ctx), variant), split, weights)
    console.print(f"predictions written: {count}")


def _metric_table(title: str, first_column: str, rows: Dict[str, Dict[str, MetricSummary]]) -> Table:
    keys = sorted({k for metrics in rows.values() for k in metrics})
    table = Table(title=title)
    table.add_column(first_column)
    for key in keys:
        table.add_column(key, justify="right")
    for label, metrics in rows.items():
        table.add_row(label, *[_cell(metrics.get(k)) for k in keys])
    return table


@app.command("eval")
@_guarded
def evaluate(
    ctx: typer.Context,
    split: str = typer.Option("test", "--split"),
    with_reference: bool = typer.Option(False, "--with-reference", help="also score the reference itself"),
):
    """Score compounding baselines and network predictions against the full compound."""
    report = pipeline.cmd_eval(_settings(ctx), split, with_reference)
    rows = {m.method: m.metrics for m in report.methods}
    console.print(_metric_table(f"{split} split vs {report.reference}", "method", rows))


@app.command()
@_guarded
def sweep(ctx: typer.Context, split: str = typer.Option("test", "--split")):
    """Compounding quality against the number of transmissions."""
    report = pipeline.cmd_sweep(_settings(ctx), split)
    console.print(_metric_table(f"{split} split vs {report.reference}, standard compounding", "DWs", {str(r.transmissions): r.metrics for r in report.rows}))


@app.command("export-bmode")
@_guarded
def export_bmode(
    ctx: typer.Context,
    split: str = typer.Option("test", "--split"),
    out: Optional[Path] = typer.Option(None, "--out", help="output directory"),
):
    """Write 60 dB B-mode PGM files for references and baselines."""
    count = pipeline.cmd_export_bmode(_settings(ctx), split, out)
    console.print(f"images written: {count}")


@app.command("inspect-model")
@_guarded
def inspect_model(
    variant: Variant = typer.Option(Variant.CID, "--variant", case_sensitive=False),
    height: int = typer.Option(338, "--height"),
    width: int = typer.Option(192, "--width"),
    benchmark: bool = typer.Option(False, "--benchmark", help="time one CPU forward pass"),
):
    """Parameter count, receptive field, FLOPs and feature sizes of a variant."""
    info = pipeline.cmd_inspect_model(variant, (height, width), benchmark)
    table = Table(title=f"{info.variant}-Net")
    table.add_column("quantity")
    table.add_column("value", justify="right")
    table.add_row("real parameters", f"{info.parameters:,}")
    table.add_row("receptive field (min)", "x".join(map(str, info.receptive_field_min)))
    table.add_row("receptive field (max)", "x".join(map(str, info.receptive_field_max)))
    table.add_row(f"FLOPs @ {height}x{width}", f"{info.flops:.3e}")
    if info.published_flops is not None:
        table.add_row("published FLOPs @ 338x192", f"{info.published_flops:.1e}")
    table.add_row("feature sizes", " -> ".join("x".join(map(str, s)) for s in info.shape_trace))
    if info.forward_seconds_f64 is not None:
        table.add_row("forward f64 (s)", f"{info.forward_seconds_f64:.3f}")
        table.add_row("forward f32 (s)", f"{info.forward_seconds_f32:.3f}")
    console.print(table)
    console.print(f"FLOP convention: {info.flop_convention}")


if __name__ == "__main__":
    sys.exit(app())
