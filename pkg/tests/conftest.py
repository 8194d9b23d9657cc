# tests/conftest.py
from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np
import pytest

from models.config import RunConfig
from models.datasets import ImageSet, TaskDataset
from services.data_service import save_tasks

SIDE = 4


def blob_images(
    rng: np.random.Generator, centres: np.ndarray, per_class: int, noise: float = 0.08
) -> ImageSet:
    classes = centres.shape[0]
    labels = np.repeat(np.arange(classes), per_class)
    pixels = centres[labels] + noise * rng.standard_normal((labels.size, centres.shape[1]))
    order = rng.permutation(labels.size)
    return ImageSet(
        np.clip(pixels[order], 0.0, 1.0), labels[order], height=SIDE, width=SIDE, num_classes=classes
    )


def make_tasks(
    class_counts: Sequence[int] = (3, 3),
    train_per_class: int = 20,
    val_per_class: int = 10,
    seed: int = 0,
) -> list[TaskDataset]:
    """Separable Gaussian blobs on 4x4 'images', one blob per class."""
    rng = np.random.default_rng(seed)
    tasks = []
    first_class = 0
    for task_id, count in enumerate(class_counts, start=1):
        centres = rng.uniform(0.15, 0.85, size=(count, SIDE * SIDE))
        tasks.append(
            TaskDataset(
                task_id=task_id,
                class_ids=tuple(range(first_class, first_class + count)),
                train=blob_images(rng, centres, train_per_class),
                val=blob_images(rng, centres, val_per_class),
            )
        )
        first_class += count
    return tasks


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tasks() -> list[TaskDataset]:
    return make_tasks()


@pytest.fixture
def cache_file(tmp_path: Path, tasks: list[TaskDataset]) -> Path:
    path = tmp_path / "cache" / "tasks.rdac"
    save_tasks(tasks, path, {"data_seed": 0})
    return path


@pytest.fixture
def run_config(tmp_path: Path, cache_file: Path) -> RunConfig:
    return RunConfig(
        epochs_per_task=3,
        lr=0.05,
        batch_size=8,
        hidden_dim=11,
        cache_path=cache_file,
        output_dir=tmp_path / "out",
        record_wallclock=False,
    )


@pytest.fixture
def mnist_dir() -> Path:
    value = os.getenv("RDAC_MNIST_DIR")
    if not value:
        pytest.skip("RDAC_MNIST_DIR is not set")
    return Path(value)
