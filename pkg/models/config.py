# models/config.py
"""
Pydantic models for everything a user configures: augmentation, seeds, case
thresholds, a single run and a parameter sweep. Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

DEFAULT_SPLITS: list[list[int]] = [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]


class Method(str, Enum):
    gradient_decomposition = "gradient_decomposition"
    ewc = "ewc"
    none = "none"
    freeze_backbone = "freeze_backbone"


# =========================
# Data preparation
# =========================


class AugmentParams(BaseModel):
    """One-time training-set augmentation. All bounds are symmetric around identity."""

    rotation_deg: float = Field(10.0, ge=0, description="Rotation drawn from [-r, +r] degrees")
    translate_frac: float = Field(0.10, ge=0, description="Shift per axis as a fraction of image size")
    scale_range: tuple[float, float] = Field((0.90, 1.10), description="Isotropic scale bounds")
    crop_pad: int = Field(4, ge=0, description="Zero padding before the random crop, in pixels")
    brightness: float = Field(0.1, ge=0, description="Multiplicative factor drawn from [1-b, 1+b]")
    contrast: float = Field(0.1, ge=0, description="Contrast factor drawn from [1-c, 1+c]")
    saturation: float = Field(0.1, ge=0, description="Accepted for parity; no effect on grayscale")
    hue: float = Field(0.1, ge=0, description="Accepted for parity; no effect on grayscale")
    seed: int = Field(0, ge=0, lt=2**64, description="Augmentation RNG seed")

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "examples": [
                {
                    "rotation_deg": 10.0,
                    "translate_frac": 0.1,
                    "scale_range": [0.9, 1.1],
                    "crop_pad": 4,
                    "brightness": 0.1,
                    "contrast": 0.1,
                    "saturation": 0.1,
                    "hue": 0.1,
                    "seed": 0,
                }
            ]
        },
    )

    @field_validator("scale_range")
    @classmethod
    def _ordered_scale(cls, value: tuple[float, float]) -> tuple[float, float]:
        low, high = value
        if low <= 0 or low > high:
            raise ValueError(f"scale_range must satisfy 0 < low <= high, got {value}")
        return value

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentParams":
        return cls(
            rotation_deg=0.0,
            translate_frac=0.0,
            scale_range=(1.0, 1.0),
            crop_pad=0,
            brightness=0.0,
            contrast=0.0,
            saturation=0.0,
            hue=0.0,
            seed=seed,
        )


# =========================
# Run configuration
# =========================


class Seeds(BaseModel):
    init: int = Field(0, ge=0, lt=2**64, description="Network initialization seed")
    data: int = Field(0, ge=0, lt=2**64, description="Augmentation seed the cache was built with")
    shuffle: int = Field(0, ge=0, lt=2**64, description="Per-epoch batch order seed")

    model_config = ConfigDict(extra="forbid")


class CaseThresholds(BaseModel):
    eps_stability: float = Field(0.02, ge=0, description="Largest accuracy drop still counted as preserved stability")
    eps_plasticity: float = Field(0.02, ge=0, description="Largest accuracy drop still counted as preserved plasticity")
    clamp_fraction: float = Field(
        0.25, gt=0, description="Displacement below this fraction of the baseline counts as clamped"
    )

    model_config = ConfigDict(extra="forbid")


class RunConfig(BaseModel):
    """Configuration of one continual-learning run over every task in the cache."""

    method: Method = Field(Method.none, description="Continual learning method for tasks after the first")
    alpha: float = Field(1.0, ge=0, le=1, description="Range weight of the gradient filter")
    beta: float = Field(1.0, ge=0, le=1, description="Null-space weight of the gradient filter")
    lambda_: float = Field(0.0, ge=0, alias="lambda", description="EWC regularization strength")
    epochs_per_task: int = Field(30, ge=1)
    lr: float = Field(5e-4, gt=0, description="SGD learning rate")
    batch_size: int = Field(16, ge=1)
    seeds: Seeds = Field(default_factory=Seeds)
    hidden_dim: int = Field(11, ge=1, description="Width of the single hidden layer")
    three_layer: bool = Field(False, description="Use the three-hidden-layer network and error projection")
    three_layer_dims: tuple[int, int, int] = Field((2, 2, 2), description="Hidden widths of the three-layer network")
    recompute_every: int = Field(1, ge=1, description="Three-layer null-space recomputation period in steps")
    readout_rel_tol: float = Field(1e-10, gt=0, description="Relative singular value cutoff for the readout range")
    subsample: Optional[int] = Field(None, ge=1, description="Cap on training samples per task")
    thresholds: CaseThresholds = Field(default_factory=CaseThresholds)
    cache_path: Optional[Path] = Field(None, description="Dataset cache; defaults to RDAC_CACHE_PATH")
    output_dir: Optional[Path] = Field(None, description="Run output directory; defaults to RDAC_OUTPUT_DIR")
    record_wallclock: bool = Field(False, description="Write measured wall-clock time into metrics (0 otherwise)")
    run_name: Optional[str] = Field(None, description="Prefix for the run id")

    model_config = ConfigDict(
        extra="forbid",
        populate_by_name=True,
        json_schema_extra={
            "examples": [
                {
                    "method": "gradient_decomposition",
                    "alpha": 0.0,
                    "beta": 1.0,
                    "epochs_per_task": 30,
                    "lr": 0.0005,
                    "batch_size": 16,
                    "seeds": {"init": 1, "data": 0, "shuffle": 2},
                    "cache_path": "cache/split_mnist.rdac",
                    "output_dir": "runs/gd_a0_b1",
                },
                {"method": "ewc", "lambda": 100.0, "subsample": 8000},
            ]
        },
    )

    @model_validator(mode="after")
    def _method_combination(self) -> "RunConfig":
        if self.three_layer and self.method == Method.ewc:
            raise ValueError("ewc is only defined for the one-hidden-layer network")
        return self

    @property
    def lam(self) -> float:
        return self.lambda_

    def identity_payload(self) -> dict[str, Any]:
        """Fields that determine the numerical outcome of the run."""
        return self.model_dump(
            mode="json",
            by_alias=True,
            exclude={"cache_path", "output_dir", "record_wallclock", "run_name"},
        )

    def run_id(self) -> str:
        digest = hashlib.sha256(
            json.dumps(self.identity_payload(), sort_keys=True).encode("utf-8")
        ).hexdigest()[:10]
        prefix = self.run_name or self.method.value
        return f"{prefix}-{digest}"

    def with_overrides(self, **updates: Any) -> "RunConfig":
        payload = self.model_dump(by_alias=True)
        if "lambda_" in updates:
            updates["lambda"] = updates.pop("lambda_")
        payload.update(updates)
        return RunConfig.model_validate(payload)


# =========================
# Sweeps
# =========================

SWEEP_AXES = ("method", "alpha", "beta", "lambda")


class AxisGenerator(BaseModel):
    """Generated axis: ``linspace`` or ``logspace`` endpoints plus a point count."""

    linspace: Optional[tuple[float, float, int]] = None
    logspace: Optional[tuple[float, float, int]] = None
    include_zero: bool = Field(False, description="Prepend 0 (the unregularized anchor) to a log axis")

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _exactly_one(self) -> "AxisGenerator":
        if (self.linspace is None) == (self.logspace is None):
            raise ValueError("axis generator needs exactly one of linspace / logspace")
        if self.logspace is not None and (self.logspace[0] <= 0 or self.logspace[1] <= 0):
            raise ValueError("logspace endpoints must be positive")
        return self

    def values(self) -> list[float]:
        if self.linspace is not None:
            lo, hi, n = self.linspace
            points = np.linspace(lo, hi, n)
        else:
            lo, hi, n = self.logspace
            points = np.logspace(np.log10(lo), np.log10(hi), n)
        values = [float(v) for v in points]
        if self.include_zero and (not values or values[0] != 0.0):
            values.insert(0, 0.0)
        return values


class GridSpec(BaseModel):
    """Cartesian product of parameter axes applied on top of a base RunConfig."""

    axes: dict[str, list[Any] | AxisGenerator] = Field(..., description="Axis name -> values or generator")

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "examples": [
                {"axes": {"alpha": {"linspace": [0, 1, 9]}, "beta": [1.0]}},
                {"axes": {"method": ["ewc"], "lambda": {"logspace": [0.001, 100000, 24], "include_zero": True}}},
            ]
        },
    )

    @field_validator("axes")
    @classmethod
    def _known_axes(cls, axes: dict[str, Any]) -> dict[str, Any]:
        unknown = sorted(set(axes) - set(SWEEP_AXES))
        if unknown:
            raise ValueError(f"unknown sweep axes {unknown}; allowed: {list(SWEEP_AXES)}")
        if not axes:
            raise ValueError("a grid needs at least one axis")
        return axes

    def axis_values(self, name: str) -> list[Any]:
        axis = self.axes[name]
        return axis.values() if isinstance(axis, AxisGenerator) else list(axis)

    def points(self) -> list[dict[str, Any]]:
        names = list(self.axes)
        grids = [self.axis_values(name) for name in names]
        return [dict(zip(names, combo)) for combo in itertools.product(*grids)]

    @classmethod
    def alpha_beta(cls, n: int = 9) -> "GridSpec":
        axis = AxisGenerator(linspace=(0.0, 1.0, n))
        return cls(axes={"method": ["gradient_decomposition"], "alpha": axis, "beta": axis})

    @classmethod
    def ewc_lambda(cls, n: int = 25, high: float = 1e5, low: float = 1e-3) -> "GridSpec":
        axis = AxisGenerator(logspace=(low, high, n - 1), include_zero=True)
        return cls(axes={"method": ["ewc"], "lambda": axis})
