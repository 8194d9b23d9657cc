from .config import (
    DEFAULT_SPLITS,
    SWEEP_AXES,
    AugmentParams,
    AxisGenerator,
    CaseThresholds,
    GridSpec,
    Method,
    RunConfig,
    Seeds,
)
from .datasets import Batch, IdxImages, ImageSet, TaskDataset
from .health import HealthCheckResponse
from .records import (
    METRICS_COLUMNS,
    CaseLabel,
    DisplacementRecord,
    EpochLog,
    PartialRunRecord,
    RunRecord,
    RunSummary,
    SweepRow,
    SweepTable,
)

__all__ = [
    # config
    "DEFAULT_SPLITS",
    "SWEEP_AXES",
    "AugmentParams",
    "AxisGenerator",
    "CaseThresholds",
    "GridSpec",
    "Method",
    "RunConfig",
    "Seeds",
    # datasets
    "Batch",
    "IdxImages",
    "ImageSet",
    "TaskDataset",
    # records
    "METRICS_COLUMNS",
    "CaseLabel",
    "DisplacementRecord",
    "EpochLog",
    "PartialRunRecord",
    "RunRecord",
    "RunSummary",
    "SweepRow",
    "SweepTable",
    # health
    "HealthCheckResponse",
]
