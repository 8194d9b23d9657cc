# services/report_service.py
"""Metrics CSV, record JSON, trade-off figures and rank-correlation analysis."""
from __future__ import annotations

import csv
import io
import json
import logging
import re
from collections import defaultdict
from pathlib import Path
from typing import Any, Optional, Sequence

import matplotlib
import numpy as np
from matplotlib.axes import Axes
from matplotlib.colors import Normalize
from matplotlib.figure import Figure
from matplotlib.tri import Triangulation
from pydantic import ValidationError
from scipy.stats import spearmanr

from frameworks.storage import atomic_write_bytes, atomic_write_text
from models.config import Method
from models.errors import ClassificationUnavailable, DataFormatError
from models.records import METRICS_COLUMNS, RunRecord
from services.rdac_service import classify_case, isotropic_ratio

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
RECORDS_FILE = "records.json"
FIGURE_FILE = "tradeoff.svg"

ANALYZED_METRICS = ("stability", "plasticity", "d_range_mean", "d_null_mean", "d_total_mean")


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def metrics_row(record: RunRecord) -> dict[str, Any]:
    config = record.config
    disp = record.displacement
    case = record.case
    return {
        "method": config.method.value,
        "alpha": config.alpha,
        "beta": config.beta,
        "lambda": config.lam,
        "seed_init": config.seeds.init,
        "seed_data": config.seeds.data,
        "seed_shuffle": config.seeds.shuffle,
        "stability": record.stability,
        "plasticity": record.plasticity,
        "capacity": record.capacity,
        "d_range_mean": disp.d_range_mean,
        "d_null_mean": disp.d_null_mean,
        "d_total_mean": disp.d_total_mean,
        "d_range_p50": disp.d_range_p50,
        "d_null_p50": disp.d_null_p50,
        "rank": disp.rank,
        "case_stability": case.stability_label if case else None,
        "case_plasticity": case.plasticity_case if case else None,
        "wallclock_s": record.wallclock_s,
    }


def metrics_csv(records: Sequence[RunRecord]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for record in records:
        row = metrics_row(record)
        writer.writerow([_fmt(row[column]) for column in METRICS_COLUMNS])
    return buffer.getvalue()


# Run families in legend order: label, marker colour.
FAMILIES: dict[str, tuple[str, str]] = {
    "alpha": ("alpha axis (beta = 1)", "tab:blue"),
    "beta": ("beta axis (alpha = 1)", "tab:orange"),
    "grid": ("gradient decomposition grid", "tab:grey"),
    "ewc": ("EWC", "tab:green"),
    "baseline": ("plain SGD", "black"),
    "frozen": ("frozen backbone", "tab:red"),
}

DISPLACEMENT_PANELS = ("stability", "plasticity", "capacity")


def run_family(record: RunRecord) -> str:
    """Which family of the sweep a record belongs to, for colouring and legends."""
    config = record.config
    if record.method == Method.ewc:
        return "ewc"
    if record.method == Method.freeze_backbone:
        return "frozen"
    if record.method == Method.none or (config.alpha == 1.0 and config.beta == 1.0):
        return "baseline"
    if config.beta == 1.0:
        return "alpha"
    if config.alpha == 1.0:
        return "beta"
    return "grid"


def _reference_ratio(records: Sequence[RunRecord]) -> Optional[float]:
    for record in records:
        try:
            return isotropic_ratio(record.displacement.rank, record.displacement.dim)
        except ValueError:
            continue
    return None


def _panel_value(record: RunRecord, panel: str) -> float:
    return getattr(record, panel)


def _draw_accuracy_panel(ax: Axes, records: Sequence[RunRecord]) -> None:
    ax.set_xlabel("stability (task 1 accuracy)")
    ax.set_ylabel("plasticity (final task accuracy)")
    for family, (label, colour) in FAMILIES.items():
        members = [r for r in records if run_family(r) == family]
        if members:
            ax.scatter([r.stability for r in members], [r.plasticity for r in members], color=colour, label=label)
    if records:
        ax.legend(loc="lower left", fontsize="small")


def _draw_displacement_panel(fig: Figure, ax: Axes, records: Sequence[RunRecord], panel: str) -> None:
    """
    Gradient-decomposition runs in the range / null displacement plane, filled
    by ``panel`` where they can be triangulated, with EWC runs scattered on top
    in the same colour scale and capacity contours overlaid.
    """
    ax.set_title(panel)
    ax.set_xlabel("range displacement")
    ax.set_ylabel("null-space displacement")
    if not records:
        return
    values = np.array([_panel_value(r, panel) for r in records])
    norm = Normalize(vmin=float(values.min()), vmax=float(values.max()) or 1.0)
    gd = [r for r in records if r.method == Method.gradient_decomposition]
    others = [r for r in records if r.method != Method.gradient_decomposition]

    mappable = None
    if len(gd) >= 3:
        x = np.array([r.displacement.d_range_mean for r in gd])
        y = np.array([r.displacement.d_null_mean for r in gd])
        try:
            triangulation = Triangulation(x, y)
            mappable = ax.tricontourf(
                triangulation, [_panel_value(r, panel) for r in gd], levels=12, cmap="viridis", norm=norm
            )
            ax.tricontour(triangulation, [r.capacity for r in gd], levels=6, colors="white", linewidths=0.6)
            ax.plot(x, y, "k.", markersize=3)
        except (ValueError, RuntimeError) as e:
            # Collinear or constant sweeps cannot be contoured.
            logger.debug(f"No {panel} contour for {len(gd)} runs: {e}")
            mappable = None
    markers = gd if mappable is None else []
    for record in [*markers, *others]:
        family = run_family(record)
        points = ax.scatter(
            record.displacement.d_range_mean,
            record.displacement.d_null_mean,
            c=[_panel_value(record, panel)],
            cmap="viridis",
            norm=norm,
            marker="s" if family == "ewc" else "o",
            edgecolors=FAMILIES[family][1],
            linewidths=1.2,
        )
        if mappable is None:
            mappable = points
    fig.colorbar(mappable, ax=ax, label=panel)

    ratio = _reference_ratio(records)
    x_max = max(r.displacement.d_range_mean for r in records)
    if ratio is not None and x_max > 0:
        line = np.array([0.0, x_max])
        ax.plot(line, ratio * line, linestyle=":", color="grey", label="isotropic")
        ax.legend(loc="upper left", fontsize="small")


def tradeoff_svg(records: Sequence[RunRecord]) -> bytes:
    """
    Stability against plasticity per run family, and the displacement plane
    coloured by stability, plasticity and capacity.
    """
    fig = Figure(figsize=(11, 9), layout="constrained")
    axes = fig.subplots(2, 2).ravel()
    _draw_accuracy_panel(axes[0], records)
    for ax, panel in zip(axes[1:], DISPLACEMENT_PANELS):
        _draw_displacement_panel(fig, ax, records, panel)
    buffer = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": "rdac", "svg.fonttype": "none"}):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def emit_report(records: Sequence[RunRecord], out_dir: Path) -> dict[str, Path]:
    """Write metrics.csv, records.json and tradeoff.svg into ``out_dir``."""
    out_dir = Path(out_dir)
    paths = {"csv": out_dir / METRICS_FILE, "json": out_dir / RECORDS_FILE, "svg": out_dir / FIGURE_FILE}
    atomic_write_text(paths["csv"], metrics_csv(records))
    payload = [r.model_dump(mode="json", by_alias=True) for r in records]
    atomic_write_text(paths["json"], json.dumps(payload, indent=2, sort_keys=True))
    atomic_write_bytes(paths["svg"], tradeoff_svg(records))
    logger.info(f"Report with {len(records)} records written to {out_dir}")
    return paths


# =========================
# Loading and analysis
# =========================


def load_records(runs_dir: Path) -> list[RunRecord]:
    """Load every run record under ``runs_dir`` (or its ``runs`` subdirectory), skipping partial markers."""
    runs_dir = Path(runs_dir)
    if (runs_dir / "runs").is_dir():
        runs_dir = runs_dir / "runs"
    if not runs_dir.is_dir():
        raise FileNotFoundError(f"no run directory at {runs_dir}")
    records = []
    for path in sorted(runs_dir.glob("*.json")):
        if path.name.endswith(".partial.json"):
            continue
        try:
            records.append(RunRecord.model_validate_json(path.read_text(encoding="utf-8")))
        except ValidationError as e:
            raise DataFormatError(f"{path} is not a run record: {e.error_count()} validation errors")
    logger.info(f"Loaded {len(records)} run records from {runs_dir}")
    return records


def label_case(record: RunRecord, baseline: RunRecord) -> RunRecord:
    """Attach the case label relative to ``baseline``; a note replaces it when unavailable."""
    try:
        case = classify_case(
            stability_drop=record.task1_accuracy_before - record.stability,
            plasticity_drop=baseline.plasticity - record.plasticity,
            range_disp=record.displacement.d_range_mean,
            null_disp=record.displacement.d_null_mean,
            baseline=baseline.displacement,
            thresholds=record.config.thresholds,
        )
    except ClassificationUnavailable as e:
        logger.warning(f"Run {record.run_id}: {e}")
        notes = [n for n in record.notes if n != str(e)] + [str(e)]
        return record.model_copy(update={"case": None, "notes": notes})
    notes = [n for n in record.notes if n != case.note]
    if case.note:
        notes.append(case.note)
    return record.model_copy(update={"case": case, "notes": notes})


def _seed_key(record: RunRecord) -> tuple:
    config = record.config
    return (
        config.seeds.init,
        config.seeds.data,
        config.seeds.shuffle,
        config.hidden_dim,
        config.three_layer,
        config.epochs_per_task,
        config.lr,
        config.batch_size,
        config.subsample,
    )


def relabel(records: Sequence[RunRecord]) -> list[RunRecord]:
    """Recompute case labels against the method-none record with matching seeds and training setup."""
    baselines = {_seed_key(r): r for r in records if r.method == Method.none}
    out = []
    for record in records:
        baseline = baselines.get(_seed_key(record))
        if baseline is None:
            logger.warning(f"Run {record.run_id}: no matching baseline; keeping its stored case label")
            out.append(record)
        else:
            out.append(label_case(record, baseline))
    return out


def _axis_value(record: RunRecord, axis: str) -> float:
    return record.config.lam if axis == "lambda" else getattr(record.config, axis)


def _metric(record: RunRecord, metric: str) -> float:
    if metric in ("stability", "plasticity"):
        return getattr(record, metric)
    return getattr(record.displacement, metric)


def _spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    if len(set(x)) < 2 or len(set(y)) < 2:
        return None
    rho = spearmanr(x, y).statistic
    return None if np.isnan(rho) else float(rho)


def axis_correlations(records: Sequence[RunRecord], min_points: int = 3) -> list[dict[str, Any]]:
    """
    Spearman correlation of each metric with each swept axis, computed on
    slices where the other axes are held fixed.
    """
    results = []
    axes = ("alpha", "beta", "lambda")
    by_method: dict[Method, list[RunRecord]] = defaultdict(list)
    for record in records:
        by_method[record.method].append(record)

    for method in sorted(by_method, key=lambda m: m.value):
        group = by_method[method]
        for axis in axes:
            others = [a for a in axes if a != axis]
            slices: dict[tuple, list[RunRecord]] = defaultdict(list)
            for record in group:
                slices[tuple(_axis_value(record, a) for a in others)].append(record)
            for fixed, members in sorted(slices.items()):
                values = [_axis_value(r, axis) for r in members]
                if len(set(values)) < min_points:
                    continue
                entry: dict[str, Any] = {
                    "method": method.value,
                    "axis": axis,
                    "fixed": dict(zip(others, fixed)),
                    "points": len(members),
                }
                for metric in ANALYZED_METRICS:
                    entry[metric] = _spearman(values, [_metric(r, metric) for r in members])
                results.append(entry)
    return results


def case_counts(records: Sequence[RunRecord]) -> dict[str, int]:
    counts: dict[str, int] = defaultdict(int)
    for record in records:
        if record.case is None:
            counts["unlabelled"] += 1
        else:
            counts[f"stability:{record.case.stability_label}"] += 1
            counts[f"plasticity:{record.case.plasticity_case}"] += 1
    return dict(sorted(counts.items()))


def analyze(records: Sequence[RunRecord]) -> dict[str, Any]:
    labelled = relabel(records)
    return {
        "runs": len(labelled),
        "cases": case_counts(labelled),
        "correlations": axis_correlations(labelled),
    }


# =========================
# Results API lookups
# =========================

_RUN_ID = re.compile(r"^[A-Za-z0-9_-]+(\.[A-Za-z0-9_-]+)*$")


def read_run(output_dir: Path, run_id: str) -> RunRecord:
    if not _RUN_ID.match(run_id):
        raise FileNotFoundError(f"invalid run id {run_id!r}")
    path = Path(output_dir) / "runs" / f"{run_id}.json"
    if not path.is_file():
        raise FileNotFoundError(f"run {run_id} not found")
    try:
        return RunRecord.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise DataFormatError(f"{path} is not a run record: {e.error_count()} validation errors")


def read_metrics(output_dir: Path) -> list[dict[str, str]]:
    path = Path(output_dir) / METRICS_FILE
    if not path.is_file():
        raise FileNotFoundError(f"no {METRICS_FILE} in {output_dir}")
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
