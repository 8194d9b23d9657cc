# services/data_service.py
"""
MNIST ingestion and split-task construction.

IDX decoding/encoding, one-time training-set augmentation, class-split task
building and the task cache stored in the RDAC container.
"""
from __future__ import annotations

import gzip
import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Any, Optional, Sequence

import httpx
import numpy as np
import numpy.typing as npt
from scipy import ndimage

from frameworks.storage import atomic_write_bytes, atomic_write_text, decode_array, encode_array
from frameworks.storage import read_container, write_container
from models.config import DEFAULT_SPLITS, AugmentParams
from models.datasets import NUM_DIGITS, IdxImages, ImageSet, TaskDataset
from models.errors import CacheError, ConfigError, DataFormatError, DataUnavailableError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
FETCH_MANIFEST = "fetch_manifest.json"


# =========================
# IDX format
# =========================


def parse_idx(data: bytes) -> IdxImages | npt.NDArray[np.int64]:
    """
    Decode an IDX image file (magic 0x803) into pixels scaled to [0, 1], or an
    IDX label file (magic 0x801) into an integer vector.
    """
    if len(data) < 4:
        raise DataFormatError(f"IDX data too short for a header: {len(data)} bytes")
    (magic,) = struct.unpack_from(">I", data, 0)

    if magic == IDX_IMAGES_MAGIC:
        if len(data) < 16:
            raise DataFormatError(f"truncated IDX image header: expected 16 bytes, got {len(data)}")
        count, rows, cols = struct.unpack_from(">III", data, 4)
        expected = count * rows * cols
        actual = len(data) - 16
        if actual != expected:
            raise DataFormatError(
                f"IDX image payload length mismatch: expected {expected} bytes, got {actual}"
            )
        raw = np.frombuffer(data, dtype=np.uint8, offset=16)
        pixels = raw.reshape(count, rows * cols).astype(np.float64) / 255.0
        return IdxImages(pixels=pixels, rows=rows, cols=cols)

    if magic == IDX_LABELS_MAGIC:
        if len(data) < 8:
            raise DataFormatError(f"truncated IDX label header: expected 8 bytes, got {len(data)}")
        (count,) = struct.unpack_from(">I", data, 4)
        actual = len(data) - 8
        if actual != count:
            raise DataFormatError(f"IDX label payload length mismatch: expected {count} bytes, got {actual}")
        return np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)

    raise DataFormatError(f"unknown IDX magic 0x{magic:08X}")


def serialize_idx_images(images: IdxImages) -> bytes:
    header = struct.pack(">IIII", IDX_IMAGES_MAGIC, images.count, images.rows, images.cols)
    payload = np.rint(images.pixels * 255.0).astype(np.uint8)
    return header + payload.tobytes()


def serialize_idx_labels(labels: npt.ArrayLike) -> bytes:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValueError("IDX labels must fit in an unsigned byte")
    return struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.astype(np.uint8).tobytes()


def _locate(mnist_dir: Path, stem: str) -> Path:
    for candidate in (mnist_dir / stem, mnist_dir / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    raise DataUnavailableError(f"{stem}[.gz] not found in {mnist_dir}")


def load_mnist_dir(mnist_dir: Path) -> tuple[ImageSet, ImageSet, dict[str, str]]:
    """
    Load the four MNIST files from ``mnist_dir`` (plain or gzipped).

    Returns ``(train, test, digests)`` with the SHA-256 of every file as read from
    disk. Digests recorded by ``fetch_mnist`` are checked when present.
    """
    mnist_dir = Path(mnist_dir)
    recorded: dict[str, str] = {}
    manifest_path = mnist_dir / FETCH_MANIFEST
    if manifest_path.exists():
        recorded = json.loads(manifest_path.read_text())

    parsed: dict[str, Any] = {}
    digests: dict[str, str] = {}
    for key, stem in MNIST_FILES.items():
        path = _locate(mnist_dir, stem)
        blob = path.read_bytes()
        digest = hashlib.sha256(blob).hexdigest()
        if path.name in recorded and recorded[path.name] != digest:
            raise DataFormatError(
                f"{path.name} has sha256 {digest}, fetch manifest recorded {recorded[path.name]}"
            )
        digests[path.name] = digest
        parsed[key] = parse_idx(gzip.decompress(blob) if path.suffix == ".gz" else blob)

    sets = []
    for prefix in ("train", "test"):
        images: IdxImages = parsed[f"{prefix}_images"]
        labels = parsed[f"{prefix}_labels"]
        if labels.shape[0] != images.count:
            raise DataFormatError(
                f"{prefix} split has {images.count} images but {labels.shape[0]} labels"
            )
        sets.append(ImageSet(images.pixels, labels, height=images.rows, width=images.cols))
    logger.info(f"Loaded MNIST from {mnist_dir}: {sets[0].count} train, {sets[1].count} test")
    return sets[0], sets[1], digests


def fetch_mnist(base_url: str, out_dir: Path, timeout: float = 30.0) -> dict[str, str]:
    """Download the gzipped MNIST files and record their SHA-256 digests."""
    out_dir = Path(out_dir)
    digests: dict[str, str] = {}
    base = base_url if base_url.endswith("/") else f"{base_url}/"
    try:
        with httpx.Client(timeout=timeout, follow_redirects=True) as client:
            for stem in MNIST_FILES.values():
                name = f"{stem}.gz"
                response = client.get(f"{base}{name}")
                response.raise_for_status()
                atomic_write_bytes(out_dir / name, response.content)
                digests[name] = hashlib.sha256(response.content).hexdigest()
                logger.info(f"Fetched {name} ({len(response.content)} bytes)")
    except httpx.HTTPError as e:
        raise DataUnavailableError(f"MNIST download from {base} failed: {e}")

    atomic_write_text(out_dir / FETCH_MANIFEST, json.dumps(digests, indent=2, sort_keys=True))
    return digests


# =========================
# Augmentation
# =========================


def adjust_brightness(image: npt.NDArray[np.float64], factor: float) -> npt.NDArray[np.float64]:
    return np.clip(image * factor, 0.0, 1.0)


def adjust_contrast(image: npt.NDArray[np.float64], factor: float) -> npt.NDArray[np.float64]:
    """Blend with the image mean: ``factor * x + (1 - factor) * mean``."""
    mean = float(image.mean())
    return np.clip(factor * image + (1.0 - factor) * mean, 0.0, 1.0)


def _affine(
    image: npt.NDArray[np.float64], angle_deg: float, shift: tuple[int, int], scale: float
) -> npt.NDArray[np.float64]:
    """Rotate, then shift, then scale about the image centre; bilinear, zero fill."""
    theta = np.deg2rad(angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    rotation = np.array([[cos, -sin], [sin, cos]])
    centre = (np.array(image.shape, dtype=np.float64) - 1.0) / 2.0
    # Inverse map: output (row, col) -> input coordinate.
    matrix = rotation.T / scale
    offset = centre - matrix @ centre - rotation.T @ np.asarray(shift, dtype=np.float64)
    warped = ndimage.affine_transform(
        image, matrix, offset=offset, order=1, mode="constant", cval=0.0, prefilter=False
    )
    return np.clip(warped, 0.0, 1.0)


def _crop(image: npt.NDArray[np.float64], pad: int, top: int, left: int) -> npt.NDArray[np.float64]:
    if pad == 0:
        return image
    height, width = image.shape
    padded = np.pad(image, pad, mode="constant", constant_values=0.0)
    return padded[top:top + height, left:left + width]


def augment_dataset(images: ImageSet, params: AugmentParams) -> ImageSet:
    """
    Transform every image exactly once: rotate, translate, scale, random crop,
    brightness, contrast. Deterministic for a given ``params.seed``.
    """
    if params.saturation or params.hue:
        logger.info("Saturation/hue jitter has no effect on single-channel images; skipped")

    rng = np.random.default_rng(params.seed)
    height, width = images.height, images.width
    low_scale, high_scale = params.scale_range
    out = np.empty_like(images.pixels)

    for i, flat in enumerate(images.pixels):
        angle = rng.uniform(-params.rotation_deg, params.rotation_deg)
        shift_y = round(rng.uniform(-params.translate_frac * height, params.translate_frac * height))
        shift_x = round(rng.uniform(-params.translate_frac * width, params.translate_frac * width))
        scale = rng.uniform(low_scale, high_scale)
        top = int(rng.integers(0, 2 * params.crop_pad + 1))
        left = int(rng.integers(0, 2 * params.crop_pad + 1))
        brightness = rng.uniform(1.0 - params.brightness, 1.0 + params.brightness)
        contrast = rng.uniform(1.0 - params.contrast, 1.0 + params.contrast)

        image = flat.reshape(height, width)
        if angle != 0.0 or shift_x != 0 or shift_y != 0 or scale != 1.0:
            image = _affine(image, angle, (shift_y, shift_x), scale)
        image = _crop(image, params.crop_pad, top, left)
        image = adjust_brightness(image, brightness)
        image = adjust_contrast(image, contrast)
        out[i] = image.ravel()

    logger.info(f"Augmented {images.count} images with seed {params.seed}")
    return ImageSet(out, images.labels, height=height, width=width, num_classes=images.num_classes)


# =========================
# Split tasks
# =========================


def validate_splits(splits: Sequence[Sequence[int]], num_classes: int = NUM_DIGITS) -> None:
    seen: set[int] = set()
    for k, class_ids in enumerate(splits, start=1):
        if not class_ids:
            raise ConfigError(f"split {k} is empty")
        for c in class_ids:
            if not 0 <= c < num_classes:
                raise ConfigError(f"split {k} names class {c}, outside [0, {num_classes})")
        overlap = seen.intersection(class_ids)
        if overlap or len(set(class_ids)) != len(class_ids):
            raise ConfigError(f"split {k} repeats classes {sorted(overlap) or list(class_ids)}")
        seen.update(class_ids)


def _task_part(images: ImageSet, class_ids: Sequence[int]) -> ImageSet:
    mask = np.isin(images.labels, class_ids)
    lookup = np.full(images.num_classes, -1, dtype=np.int64)
    lookup[list(class_ids)] = np.arange(len(class_ids))
    return ImageSet(
        images.pixels[mask],
        lookup[images.labels[mask]],
        height=images.height,
        width=images.width,
        num_classes=len(class_ids),
    )


def build_split_mnist(
    train: ImageSet,
    test: ImageSet,
    splits: Optional[Sequence[Sequence[int]]] = None,
    augment: Optional[AugmentParams] = None,
) -> list[TaskDataset]:
    """
    One TaskDataset per class list. Training images are augmented (when
    ``augment`` is given) before filtering; validation comes from the untouched
    test partition.
    """
    splits = [list(s) for s in (splits if splits is not None else DEFAULT_SPLITS)]
    validate_splits(splits, train.num_classes)

    source = augment_dataset(train, augment) if augment is not None else train
    tasks = []
    for task_id, class_ids in enumerate(splits, start=1):
        task = TaskDataset(
            task_id=task_id,
            class_ids=tuple(class_ids),
            train=_task_part(source, class_ids),
            val=_task_part(test, class_ids),
        )
        logger.info(
            f"Task {task_id} classes {class_ids}: {task.train.count} train, {task.val.count} val"
        )
        tasks.append(task)
    return tasks


# =========================
# Cache
# =========================


def save_tasks(
    tasks: Sequence[TaskDataset], path: Path, provenance: Optional[dict[str, Any]] = None
) -> None:
    manifest: dict[str, Any] = {"kind": "tasks", "provenance": provenance or {}, "tasks": []}
    sections: dict[str, bytes] = {}
    for task in tasks:
        manifest["tasks"].append(
            {
                "task_id": task.task_id,
                "class_ids": list(task.class_ids),
                "height": task.train.height,
                "width": task.train.width,
                "train_count": task.train.count,
                "val_count": task.val.count,
            }
        )
        for part in ("train", "val"):
            images: ImageSet = getattr(task, part)
            sections[f"task/{task.task_id}/{part}/pixels"] = encode_array(images.pixels)
            sections[f"task/{task.task_id}/{part}/labels"] = encode_array(images.labels)
    sections = {"manifest": json.dumps(manifest, sort_keys=True).encode("utf-8"), **sections}
    write_container(path, sections)


def _manifest(sections: dict[str, bytes], path: Path, kind: str) -> dict[str, Any]:
    try:
        manifest = json.loads(sections["manifest"].decode("utf-8"))
    except (KeyError, ValueError) as e:
        raise CacheError(f"{path} has no readable manifest ({e})")
    if manifest.get("kind") != kind:
        raise CacheError(f"{path} holds {manifest.get('kind')!r}, expected {kind!r}")
    return manifest


def load_cache_provenance(path: Path) -> dict[str, Any]:
    return _manifest(read_container(path), Path(path), "tasks").get("provenance", {})


def load_tasks(path: Path) -> list[TaskDataset]:
    path = Path(path)
    sections = read_container(path)
    manifest = _manifest(sections, path, "tasks")
    tasks = []
    try:
        for entry in manifest["tasks"]:
            task_id = entry["task_id"]
            size = entry["height"] * entry["width"]
            parts = {}
            for part in ("train", "val"):
                count = entry[f"{part}_count"]
                pixels = decode_array(sections[f"task/{task_id}/{part}/pixels"], (count, size))
                labels = decode_array(sections[f"task/{task_id}/{part}/labels"], (count,))
                parts[part] = ImageSet(
                    pixels,
                    labels.astype(np.int64),
                    height=entry["height"],
                    width=entry["width"],
                    num_classes=len(entry["class_ids"]),
                )
            tasks.append(TaskDataset(task_id, tuple(entry["class_ids"]), parts["train"], parts["val"]))
    except KeyError as e:
        raise CacheError(f"{path} is missing section or field {e}")
    logger.info(f"Loaded {len(tasks)} tasks from {path}")
    return tasks


def cache_roundtrip(tasks: Sequence[TaskDataset], path: Path) -> list[TaskDataset]:
    save_tasks(tasks, path)
    return load_tasks(path)


def prepare_cache(
    mnist_dir: Path,
    out: Path,
    seed: int,
    splits: Optional[Sequence[Sequence[int]]] = None,
    augment: Optional[AugmentParams] = None,
) -> list[TaskDataset]:
    """Build split-MNIST tasks from IDX files and write them to the cache ``out``."""
    if splits is not None:
        validate_splits(splits)
    train, test, digests = load_mnist_dir(Path(mnist_dir))
    params = (augment or AugmentParams()).model_copy(update={"seed": seed})
    tasks = build_split_mnist(train, test, splits, params)
    provenance = {
        "data_seed": seed,
        "augment": params.model_dump(mode="json"),
        "splits": [list(t.class_ids) for t in tasks],
        "source_sha256": digests,
    }
    save_tasks(tasks, out, provenance)
    return tasks
