# resources/cli.py
"""``rdac`` command line: data preparation, runs, sweeps, analysis, reports and the results API."""
from __future__ import annotations

import functools
import json
import logging
import os
from pathlib import Path
from typing import Any, Callable, Optional

import click
import uvicorn
from pydantic import ValidationError

from frameworks.settings import get_settings
from models.config import AugmentParams, GridSpec, RunConfig
from models.errors import (
    CacheError,
    ConfigError,
    DataFormatError,
    DataUnavailableError,
    DomainError,
    NumericalError,
    PartialSweepError,
    ShapeError,
)
from services.data_service import fetch_mnist, prepare_cache
from services.harness_service import run_experiment, sweep_grid
from services.report_service import analyze, emit_report, load_records, relabel

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_PARTIAL = 5

_EXIT_CODES: tuple[tuple[type[BaseException], int], ...] = (
    (PartialSweepError, EXIT_PARTIAL),
    (ConfigError, EXIT_CONFIG),
    (ShapeError, EXIT_CONFIG),
    (ValidationError, EXIT_CONFIG),
    (DataFormatError, EXIT_DATA),
    (CacheError, EXIT_DATA),
    (DataUnavailableError, EXIT_DATA),
    (FileNotFoundError, EXIT_DATA),
    (NumericalError, EXIT_NUMERICAL),
    (DomainError, EXIT_NUMERICAL),
)


def exit_code_for(error: BaseException) -> Optional[int]:
    for kind, code in _EXIT_CODES:
        if isinstance(error, kind):
            return code
    return None


def _with_exit_codes(command: Callable[..., Any]) -> Callable[..., Any]:
    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as e:
            code = exit_code_for(e)
            if code is None:
                raise
            logger.error(f"{type(e).__name__}: {e}")
            raise SystemExit(code)

    return wrapper


def _read_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")


def load_run_config(path: Path, **overrides: Any) -> RunConfig:
    payload = _read_json(path)
    payload.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"invalid run config {path}: {e}")


def load_grid(path: Path) -> GridSpec:
    try:
        return GridSpec.model_validate(_read_json(path))
    except ValidationError as e:
        raise ConfigError(f"invalid grid {path}: {e}")


@click.group()
@click.option("--log-level", default=None, help="Overrides RDAC_LOG_LEVEL.")
def cli(log_level: Optional[str]) -> None:
    """Readout-decomposition experiments on split-MNIST."""
    level = (log_level or get_settings().log_level).upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# =========================
# data
# =========================


@cli.group()
def data() -> None:
    """Download MNIST and build the task cache."""


@data.command("fetch")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--base-url", default=None, help="Overrides RDAC_MNIST_BASE_URL.")
@_with_exit_codes
def data_fetch(out_dir: Path, base_url: Optional[str]) -> None:
    settings = get_settings()
    digests = fetch_mnist(base_url or settings.mnist_base_url, out_dir, settings.http_timeout)
    click.echo(json.dumps(digests, indent=2, sort_keys=True))


@data.command("prepare")
@click.option("--mnist-dir", type=click.Path(path_type=Path, exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Defaults to RDAC_CACHE_PATH.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True,
              help="Augmentation seed.")
@click.option("--splits", default=None, help='JSON list of class lists, e.g. "[[0,1,2,3,4],[5,6,7,8,9]]".')
@click.option("--augment", "augment_path", type=click.Path(path_type=Path, exists=True), default=None,
              help="JSON file with augmentation parameters.")
@click.option("--no-augment", is_flag=True, help="Store the training images unchanged.")
@_with_exit_codes
def data_prepare(
    mnist_dir: Path,
    out: Optional[Path],
    seed: int,
    splits: Optional[str],
    augment_path: Optional[Path],
    no_augment: bool,
) -> None:
    if no_augment:
        params = AugmentParams.identity(seed)
    elif augment_path is not None:
        try:
            params = AugmentParams.model_validate(_read_json(augment_path))
        except ValidationError as e:
            raise ConfigError(f"invalid augmentation parameters: {e}")
    else:
        params = AugmentParams()
    try:
        split_list = json.loads(splits) if splits else None
    except json.JSONDecodeError as e:
        raise ConfigError(f"--splits is not valid JSON: {e}")
    out = out or get_settings().cache_path
    tasks = prepare_cache(mnist_dir, out, seed, split_list, params)
    for task in tasks:
        click.echo(f"task {task.task_id} classes {list(task.class_ids)}: {task.train.count} train, {task.val.count} val")
    click.echo(f"cache written to {out}")


# =========================
# experiments
# =========================


@cli.command("run")
@click.option("--config", "config_path", type=click.Path(path_type=Path, exists=True), required=True)
@click.option("--subsample", type=int, default=None, help="Cap on training samples per task.")
@click.option("--output-dir", type=click.Path(path_type=Path), default=None)
@_with_exit_codes
def run(config_path: Path, subsample: Optional[int], output_dir: Optional[Path]) -> None:
    config = load_run_config(config_path, subsample=subsample, output_dir=output_dir)
    record = run_experiment(config)
    out = Path(config.output_dir or get_settings().output_dir)
    emit_report([record], out)
    click.echo(
        f"{record.run_id}: stability {record.stability:.4f} plasticity {record.plasticity:.4f} "
        f"d_range {record.displacement.d_range_mean:.3e} d_null {record.displacement.d_null_mean:.3e}"
    )


@cli.command("sweep")
@click.option("--config", "config_path", type=click.Path(path_type=Path, exists=True), required=True)
@click.option("--grid", "grid_path", type=click.Path(path_type=Path, exists=True), required=True)
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Overrides RDAC_WORKERS.")
@click.option("--subsample", type=int, default=None)
@_with_exit_codes
def sweep(config_path: Path, grid_path: Path, workers: Optional[int], subsample: Optional[int]) -> None:
    config = load_run_config(config_path, subsample=subsample)
    grid = load_grid(grid_path)
    table = sweep_grid(config, grid, workers or get_settings().workers)
    click.echo(f"{len(table.rows)} runs, {table.failed} failed")


@cli.command("analyze")
@click.option("--runs", "runs_dir", type=click.Path(path_type=Path, exists=True, file_okay=False), required=True)
@_with_exit_codes
def analyze_runs(runs_dir: Path) -> None:
    click.echo(json.dumps(analyze(load_records(runs_dir)), indent=2, sort_keys=True))


@cli.command("report")
@click.option("--runs", "runs_dir", type=click.Path(path_type=Path, exists=True, file_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@_with_exit_codes
def report(runs_dir: Path, out_dir: Path) -> None:
    paths = emit_report(relabel(load_records(runs_dir)), out_dir)
    for kind, path in paths.items():
        click.echo(f"{kind}: {path}")


@cli.command("serve")
@click.option("--runs", "runs_dir", type=click.Path(path_type=Path, file_okay=False), default=None,
              help="Output directory to serve; defaults to RDAC_OUTPUT_DIR.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(runs_dir: Optional[Path], host: str, port: int) -> None:
    """Start the read-only results API."""
    if runs_dir is not None:
        os.environ["RDAC_OUTPUT_DIR"] = str(runs_dir)
    uvicorn.run("main:app", host=host, port=port)


if __name__ == "__main__":
    cli()
