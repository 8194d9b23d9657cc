# models/records.py
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator

from models.config import CaseThresholds, Method, RunConfig

RECORD_FORMAT_VERSION = 1

METRICS_COLUMNS: tuple[str, ...] = (
    "method",
    "alpha",
    "beta",
    "lambda",
    "seed_init",
    "seed_data",
    "seed_shuffle",
    "stability",
    "plasticity",
    "capacity",
    "d_range_mean",
    "d_null_mean",
    "d_total_mean",
    "d_range_p50",
    "d_null_p50",
    "rank",
    "case_stability",
    "case_plasticity",
    "wallclock_s",
)


# =========================
# Displacement / cases
# =========================


class DisplacementRecord(BaseModel):
    """Per-sample activation change split into readout range and null space."""

    d_range_mean: float = Field(..., ge=0, description="Mean per-sample norm of the range component")
    d_null_mean: float = Field(..., ge=0, description="Mean per-sample norm of the null-space component")
    d_total_mean: float = Field(..., ge=0, description="Mean per-sample norm of the full change")
    d_range_p10: float = 0.0
    d_range_p50: float = 0.0
    d_range_p90: float = 0.0
    d_null_p10: float = 0.0
    d_null_p50: float = 0.0
    d_null_p90: float = 0.0
    d_total_p10: float = 0.0
    d_total_p50: float = 0.0
    d_total_p90: float = 0.0
    count: int = Field(..., ge=0, description="Number of samples")
    rank: int = Field(..., ge=0, description="Rank of the readout used for the split")
    dim: int = Field(..., ge=1, description="Activation space dimension")

    model_config = ConfigDict(
        json_schema_extra={
            "examples": [
                {
                    "d_range_mean": 1.2e-14,
                    "d_null_mean": 0.84,
                    "d_total_mean": 0.84,
                    "count": 5139,
                    "rank": 5,
                    "dim": 11,
                }
            ]
        }
    )


class CaseLabel(BaseModel):
    """Stability case (1, 2 or 4) and plasticity case (5-8) of one run."""

    stability_case: Optional[int] = Field(
        None, description="1, 2 or 4; None when the measurement is inconsistent"
    )
    plasticity_case: int = Field(..., ge=5, le=8)
    inconsistent: bool = Field(False, description="Stability hampered while range is clamped")
    stability_preserved: bool
    range_clamped: bool
    plasticity_preserved: bool
    null_clamped: bool
    thresholds: CaseThresholds
    note: Optional[str] = None

    @field_validator("stability_case")
    @classmethod
    def _no_case_three(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value not in (1, 2, 4):
            raise ValueError(f"stability case must be 1, 2 or 4, got {value}")
        return value

    @property
    def stability_label(self) -> str:
        return "inconsistent" if self.inconsistent else str(self.stability_case)


# =========================
# Run records
# =========================


class EpochLog(BaseModel):
    task_id: int
    epoch: int
    train_loss: float
    val_accuracy: float = Field(..., ge=0, le=1)


class RunRecord(BaseModel):
    """Complete provenance and outcome of one continual-learning run."""

    format_version: int = RECORD_FORMAT_VERSION
    run_id: str
    config: RunConfig
    stability: float = Field(..., ge=0, le=1, description="Task-1 validation accuracy after all training")
    plasticity: float = Field(..., ge=0, le=1, description="Final-task validation accuracy after all training")
    task1_accuracy_before: float = Field(..., ge=0, le=1, description="Task-1 accuracy right after task 1")
    accuracy_matrix: list[list[float]] = Field(
        default_factory=list, description="Row i: accuracies on tasks 1..i+1 after training task i+1"
    )
    epoch_logs: list[EpochLog] = Field(default_factory=list)
    displacement: DisplacementRecord
    logit_drift_max: float = Field(..., ge=0, description="Largest absolute change of task-1 validation logits")
    case: Optional[CaseLabel] = None
    notes: list[str] = Field(default_factory=list)
    wallclock_s: float = Field(0.0, ge=0)

    model_config = ConfigDict(
        json_schema_extra={
            "examples": [
                {
                    "run_id": "gradient_decomposition-3f1c9a2b7d",
                    "config": {"method": "gradient_decomposition", "alpha": 0.0, "beta": 1.0},
                    "stability": 0.93,
                    "plasticity": 0.88,
                    "task1_accuracy_before": 0.93,
                    "displacement": {"d_range_mean": 0.0, "d_null_mean": 0.8, "d_total_mean": 0.8,
                                     "count": 5139, "rank": 5, "dim": 11},
                    "logit_drift_max": 2.1e-13,
                }
            ]
        }
    )

    @computed_field
    @property
    def capacity(self) -> float:
        return self.stability + self.plasticity

    @property
    def method(self) -> Method:
        return self.config.method


class PartialRunRecord(BaseModel):
    """Marker left behind when a run aborts part-way."""

    format_version: int = RECORD_FORMAT_VERSION
    run_id: str
    config: RunConfig
    partial: bool = True
    failed_stage: str
    error: str


class SweepRow(BaseModel):
    run_id: str
    params: dict[str, float | str]
    record: Optional[RunRecord] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.record is not None


class SweepTable(BaseModel):
    """Aggregated sweep output keyed by the swept parameters."""

    axes: list[str]
    rows: list[SweepRow] = Field(default_factory=list)

    @property
    def failed(self) -> int:
        return sum(1 for row in self.rows if not row.ok)

    def records(self) -> list[RunRecord]:
        return [row.record for row in self.rows if row.record is not None]


class RunSummary(BaseModel):
    """Row of the run listing served by the results API."""

    run_id: str
    method: Method
    alpha: float
    beta: float
    lambda_: float = Field(..., alias="lambda")
    stability: float
    plasticity: float
    capacity: float
    case_stability: Optional[str] = None
    case_plasticity: Optional[int] = None

    model_config = ConfigDict(populate_by_name=True)

    @classmethod
    def from_record(cls, record: RunRecord) -> "RunSummary":
        return cls(
            run_id=record.run_id,
            method=record.method,
            alpha=record.config.alpha,
            beta=record.config.beta,
            lambda_=record.config.lam,
            stability=record.stability,
            plasticity=record.plasticity,
            capacity=record.capacity,
            case_stability=record.case.stability_label if record.case else None,
            case_plasticity=record.case.plasticity_case if record.case else None,
        )
