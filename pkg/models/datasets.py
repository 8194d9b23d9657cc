# models/datasets.py
"""
Array-backed dataset carriers. Arrays are made read-only on construction so a
TaskDataset can be shared between sweep workers without copying.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from models.errors import ShapeError

NUM_DIGITS = 10


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ImageSet:
    """``count`` flattened images (pixels in [0, 1]) with integer labels."""

    pixels: npt.NDArray[np.float64]
    labels: npt.NDArray[np.int64]
    height: int = 28
    width: int = 28
    num_classes: int = NUM_DIGITS

    def __post_init__(self) -> None:
        pixels = np.array(self.pixels, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if pixels.ndim != 2 or pixels.shape[1] != self.height * self.width:
            raise ShapeError(
                f"pixels must be count x {self.height * self.width}", pixels.shape
            )
        if labels.shape != (pixels.shape[0],):
            raise ShapeError("one label per image required", labels.shape, pixels.shape)
        if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "pixels", _frozen(pixels))
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def count(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, index: npt.ArrayLike) -> "ImageSet":
        index = np.asarray(index)
        return ImageSet(
            pixels=self.pixels[index],
            labels=self.labels[index],
            height=self.height,
            width=self.width,
            num_classes=self.num_classes,
        )

    def same_as(self, other: "ImageSet") -> bool:
        return (
            self.height == other.height
            and self.width == other.width
            and self.num_classes == other.num_classes
            and np.array_equal(self.pixels, other.pixels)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class TaskDataset:
    """One task of a split benchmark; labels are indices into ``class_ids``."""

    task_id: int
    class_ids: tuple[int, ...]
    train: ImageSet
    val: ImageSet

    def __post_init__(self) -> None:
        if self.task_id < 1:
            raise ValueError(f"task ids start at 1, got {self.task_id}")
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
        for part in (self.train, self.val):
            if part.num_classes != len(self.class_ids):
                raise ValueError(
                    f"task {self.task_id} has {len(self.class_ids)} classes, "
                    f"image set declares {part.num_classes}"
                )

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    @property
    def input_dim(self) -> int:
        return self.train.height * self.train.width

    def original_labels(self, part: str = "train") -> npt.NDArray[np.int64]:
        labels = getattr(self, part).labels
        return np.asarray(self.class_ids, dtype=np.int64)[labels]

    def same_as(self, other: "TaskDataset") -> bool:
        return (
            self.task_id == other.task_id
            and self.class_ids == other.class_ids
            and self.train.same_as(other.train)
            and self.val.same_as(other.val)
        )


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: npt.NDArray[np.float64]
    labels: npt.NDArray[np.int64]
    task_id: int

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ShapeError("batch inputs must be b x x with b >= 1", self.inputs.shape)
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError("one label per batch row required", self.labels.shape, self.inputs.shape)

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])


@dataclass(frozen=True)
class IdxImages:
    """Decoded IDX image file: ``pixels`` is count x (rows * cols) in [0, 1]."""

    pixels: npt.NDArray[np.float64]
    rows: int
    cols: int

    @property
    def count(self) -> int:
        return int(self.pixels.shape[0])
