# tests/test_cli.py
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from models.errors import CacheError, ConfigError, NumericalError, PartialSweepError
from resources.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_NUMERICAL,
    EXIT_PARTIAL,
    cli,
    exit_code_for,
    load_grid,
    load_run_config,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def runner():
    return CliRunner()


def _write_config(tmp_path, **fields):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(fields))
    return path


def test_exit_code_table():
    assert exit_code_for(ConfigError("x")) == EXIT_CONFIG
    assert exit_code_for(CacheError("x")) == EXIT_DATA
    assert exit_code_for(FileNotFoundError("x")) == EXIT_DATA
    assert exit_code_for(NumericalError("x")) == EXIT_NUMERICAL
    assert exit_code_for(PartialSweepError(1, 4)) == EXIT_PARTIAL
    assert exit_code_for(RuntimeError("x")) is None


def test_run_writes_report(runner, tmp_path, cache_file):
    out = tmp_path / "out"
    config = _write_config(
        tmp_path, method="gradient_decomposition", alpha=0.0, beta=1.0, epochs_per_task=2, lr=0.05,
        batch_size=8, cache_path=str(cache_file), record_wallclock=False,
    )
    result = runner.invoke(cli, ["run", "--config", str(config), "--output-dir", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "metrics.csv").read_text().count("\n") == 2
    assert (out / "tradeoff.svg").is_file()

    analyzed = runner.invoke(cli, ["analyze", "--runs", str(out)])
    assert analyzed.exit_code == 0
    assert json.loads(analyzed.stdout)["runs"] == 2


def test_unknown_config_field_exits_with_config_code(runner, tmp_path):
    config = _write_config(tmp_path, method="none", learning_rate=0.1)
    result = runner.invoke(cli, ["run", "--config", str(config)])
    assert result.exit_code == EXIT_CONFIG


def test_missing_cache_exits_with_data_code(runner, tmp_path):
    config = _write_config(tmp_path, cache_path=str(tmp_path / "absent.rdac"), output_dir=str(tmp_path / "out"))
    result = runner.invoke(cli, ["run", "--config", str(config)])
    assert result.exit_code == EXIT_DATA


def test_diverging_run_exits_with_numerical_code(runner, tmp_path, cache_file):
    config = _write_config(
        tmp_path, method="ewc", epochs_per_task=3, lr=0.05, batch_size=8,
        cache_path=str(cache_file), record_wallclock=False, **{"lambda": 1e10},
    )
    result = runner.invoke(cli, ["run", "--config", str(config), "--output-dir", str(tmp_path / "out")])
    assert result.exit_code == EXIT_NUMERICAL
    assert list((tmp_path / "out" / "runs").glob("*.partial.json"))


def test_invalid_grid_exits_with_config_code(runner, tmp_path, cache_file):
    config = _write_config(tmp_path, cache_path=str(cache_file), output_dir=str(tmp_path / "out"))
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"axes": {"gamma": [1.0]}}))
    result = runner.invoke(cli, ["sweep", "--config", str(config), "--grid", str(grid)])
    assert result.exit_code == EXIT_CONFIG


def test_prepare_rejects_overlapping_splits(runner, tmp_path):
    mnist = tmp_path / "mnist"
    mnist.mkdir()
    result = runner.invoke(
        cli, ["data", "prepare", "--mnist-dir", str(mnist), "--out", str(tmp_path / "c.rdac"),
              "--splits", "[[0, 1], [1, 2]]"],
    )
    assert result.exit_code == EXIT_CONFIG


@pytest.mark.parametrize("name", ["null_space.json", "base.json", "three_layer.json"])
def test_shipped_run_configs_validate(name):
    config = load_run_config(CONFIGS / name)
    assert config.method.value == "gradient_decomposition"


def test_shipped_grids_validate():
    assert len(load_grid(CONFIGS / "alpha_beta.json").points()) == 81
    assert len(load_grid(CONFIGS / "ewc_lambda.json").points()) == 25


def test_prepare_rejects_negative_seed(runner, tmp_path):
    mnist = tmp_path / "mnist"
    mnist.mkdir()
    result = runner.invoke(cli, ["data", "prepare", "--mnist-dir", str(mnist), "--seed", "-1"])
    assert result.exit_code == EXIT_CONFIG
    assert "--seed" in result.output
    assert not isinstance(result.exception, ValueError)
