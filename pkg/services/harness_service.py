# services/harness_service.py
"""
Continual-learning experiments: per-task SGD loops, the task-by-task protocol
with frozen readouts, displacement and case diagnostics, and parameter sweeps.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from frameworks.settings import get_settings
from frameworks.storage import atomic_write_text
from models.config import GridSpec, Method, RunConfig
from models.datasets import Batch, TaskDataset
from models.errors import ConfigError, NumericalError, PartialSweepError
from models.records import EpochLog, PartialRunRecord, RunRecord, SweepRow, SweepTable
from services.data_service import load_cache_provenance, load_tasks
from services.ewc_service import EwcState, apply_ewc, create_ewc_state
from services.linalg import Matrix
from services.network_service import (
    NetDims,
    Network,
    ThreeLayerNet,
    accuracy,
    compute_grads,
    forward,
    grads_three_layer,
    hidden_activations,
    init_net,
    save_checkpoint,
    sgd_step,
    softmax_ce,
)
from services.report_service import emit_report, label_case
from services.rdac_service import (
    ProjectionSpec,
    ReadoutDecomposition,
    displacement,
    error_projector,
    project_hidden_gradient,
    projection_spec,
    readout_decomposition,
    stacked_decomposition,
)

logger = logging.getLogger(__name__)

# Largest weight magnitude a run may reach before it counts as diverged.
DIVERGENCE_LIMIT = 1e8


class ErrorProjector:
    """
    Error-signal projector for three-layer training that is rebuilt from the
    current weights every ``recompute_every`` steps.
    """

    def __init__(self, old_tasks: Sequence[int], new_task: int, recompute_every: int = 1, rel_tol: float = 1e-10):
        self.old_tasks = list(old_tasks)
        self.new_task = new_task
        self.recompute_every = recompute_every
        self.rel_tol = rel_tol
        self.steps = 0
        self.empty_steps = 0
        self._a: Optional[Matrix] = None

    def __call__(self, net: ThreeLayerNet, e_o: Matrix) -> Matrix:
        if self._a is None or self.steps % self.recompute_every == 0:
            projection = error_projector(net, self.old_tasks, self.new_task, self.rel_tol)
            self._a = projection.a
            if projection.empty:
                self.empty_steps += 1
        self.steps += 1
        return e_o @ self._a


def _resolve_paths(config: RunConfig) -> tuple[Path, Path]:
    settings = get_settings()
    return Path(config.cache_path or settings.cache_path), Path(config.output_dir or settings.output_dir)


def _subsample(task: TaskDataset, limit: Optional[int]) -> TaskDataset:
    if limit is None or task.train.count <= limit:
        return task
    return replace(task, train=task.train.subset(np.arange(limit)))


def _shuffled_batches(task: TaskDataset, batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    order = rng.permutation(task.train.count)
    for start in range(0, len(order), batch_size):
        index = order[start:start + batch_size]
        yield Batch(task.train.pixels[index], task.train.labels[index], task.task_id)


def check_weights(net: Network, task_id: int, epoch: int, loss: float) -> None:
    """Raise NumericalError once any weight is non-finite or beyond DIVERGENCE_LIMIT."""
    largest = max(float(np.max(np.abs(w), initial=0.0)) for w in (*net.hidden, *net.readouts.values()))
    if not np.isfinite(largest) or largest > DIVERGENCE_LIMIT or not np.isfinite(loss):
        raise NumericalError(
            f"training diverged on task {task_id} at epoch {epoch}: "
            f"largest weight magnitude {largest:.3e}, mean loss {loss:.3e}"
        )


def train_task(
    net: Network,
    task: TaskDataset,
    config: RunConfig,
    projector: Optional[ProjectionSpec] = None,
    ewc_states: Optional[Sequence[EwcState]] = None,
    *,
    error_proj: Optional[ErrorProjector] = None,
    freeze_backbone: bool = False,
) -> tuple[Network, list[EpochLog]]:
    """
    Mini-batch SGD on one task. Per step: gradients, then the EWC penalty or the
    hidden-gradient filter (at most one of them), then the update. Batch order
    comes from a generator seeded by ``(seeds.shuffle, task_id)``.
    """
    if projector is not None and ewc_states:
        raise ConfigError("a projector and an EWC penalty cannot be active on the same task")
    if error_proj is not None and not isinstance(net, ThreeLayerNet):
        raise ConfigError("error projection requires the three-layer network")
    if task.train.count == 0:
        raise ConfigError(f"task {task.task_id} has no training samples")

    rng = np.random.default_rng([config.seeds.shuffle, task.task_id])
    logs = []
    for epoch in range(1, config.epochs_per_task + 1):
        losses = []
        for batch in _shuffled_batches(task, config.batch_size, rng):
            if error_proj is not None:
                _, logits = forward(net, batch.inputs, batch.task_id)
                _, e_o = softmax_ce(logits, batch.labels)
                grads = grads_three_layer(net, batch, e_o_override=error_proj(net, e_o))
            else:
                grads = compute_grads(net, batch)

            if freeze_backbone:
                grads = grads.with_hidden([None] * len(grads.hidden))
            elif ewc_states:
                grads = grads.with_hidden([apply_ewc(grads.d_w_h, ewc_states, net.w_h)])
            elif projector is not None and not projector.is_identity:
                grads = grads.with_hidden([project_hidden_gradient(grads.d_w_h, projector)])

            sgd_step(net, grads, config.lr)
            losses.append(grads.loss)

        train_loss = float(np.mean(losses))
        check_weights(net, task.task_id, epoch, train_loss)
        log = EpochLog(
            task_id=task.task_id,
            epoch=epoch,
            train_loss=train_loss,
            val_accuracy=accuracy(net, task.val, task.task_id),
        )
        logger.debug(f"Task {task.task_id} epoch {epoch}: loss {log.train_loss:.4f}, val acc {log.val_accuracy:.4f}")
        logs.append(log)

    logger.info(
        f"Finished task {task.task_id} after {config.epochs_per_task} epochs: "
        f"loss {logs[-1].train_loss:.4f}, val acc {logs[-1].val_accuracy:.4f}"
    )
    return net, logs


# =========================
# Protocol
# =========================


def baseline_config(config: RunConfig) -> RunConfig:
    """Unregularized run with the same seeds, data and network."""
    return config.with_overrides(method=Method.none.value, alpha=1.0, beta=1.0, lambda_=0.0, run_name=None)


def _net_dims(config: RunConfig, tasks: Sequence[TaskDataset]) -> NetDims:
    hidden = tuple(config.three_layer_dims) if config.three_layer else (config.hidden_dim,)
    return NetDims(input_dim=tasks[0].input_dim, hidden=hidden, outputs=tuple(t.num_classes for t in tasks))


def _readout_one_decomposition(net: Network, config: RunConfig) -> ReadoutDecomposition:
    w_r1 = net.readout(1)
    if w_r1.shape[0] > w_r1.shape[1]:
        # Narrow three-layer backbones: the readout spans the whole layer.
        return stacked_decomposition([w_r1], config.readout_rel_tol)
    return readout_decomposition(w_r1, config.readout_rel_tol)


def _check_provenance(cache_path: Path, config: RunConfig) -> None:
    provenance = load_cache_provenance(cache_path)
    data_seed = provenance.get("data_seed")
    if data_seed is not None and data_seed != config.seeds.data:
        logger.warning(f"Cache {cache_path} was built with data seed {data_seed}, config says {config.seeds.data}")


def _write_partial(output_dir: Path, config: RunConfig, stage: str, error: Exception) -> None:
    marker = PartialRunRecord(run_id=config.run_id(), config=config, failed_stage=stage, error=str(error))
    path = output_dir / "runs" / f"{marker.run_id}.partial.json"
    atomic_write_text(path, marker.model_dump_json(indent=2, by_alias=True))
    logger.error(f"Run {marker.run_id} failed during {stage}: {error}; marker written to {path}")


def run_experiment(
    config: RunConfig,
    baseline: Optional[RunRecord] = None,
    tasks: Optional[Sequence[TaskDataset]] = None,
    *,
    persist: bool = True,
) -> RunRecord:
    """
    Train task 1 plainly, freeze its readout, then train every later task with
    the configured method. Stability is task-1 accuracy at the end, plasticity
    the last task's accuracy; displacement compares task-1 validation
    activations right after task 1 with those at the end.
    """
    cache_path, output_dir = _resolve_paths(config)
    run_id = config.run_id()
    stage = "load"
    try:
        if tasks is None:
            tasks = load_tasks(cache_path)
            _check_provenance(cache_path, config)
        tasks = [_subsample(t, config.subsample) for t in tasks]
        if len(tasks) < 2:
            raise ConfigError(f"a continual run needs at least two tasks, got {len(tasks)}")

        stage = "init"
        started = time.perf_counter()
        net = init_net(_net_dims(config, tasks), config.seeds.init)
        logger.info(f"Run {run_id}: {config.method.value} over {len(tasks)} tasks")

        stage = "task 1"
        first = tasks[0]
        net, epoch_logs = train_task(net, first, config)
        task1_before = accuracy(net, first.val, first.task_id)
        accuracy_matrix = [[task1_before]]
        net.freeze_readout(first.task_id)
        h_before = hidden_activations(net, first.val.pixels)
        logits_before = forward(net, first.val.pixels, first.task_id)[1]

        ewc_states: list[EwcState] = []
        for index in range(1, len(tasks)):
            task = tasks[index]
            prior = tasks[:index]
            stage = f"task {task.task_id}"
            options: dict = {}
            if config.method == Method.gradient_decomposition:
                if config.three_layer:
                    options["error_proj"] = ErrorProjector(
                        [t.task_id for t in prior], task.task_id, config.recompute_every, config.readout_rel_tol
                    )
                else:
                    if index == 1:
                        decomp = readout_decomposition(net.readout(first.task_id), config.readout_rel_tol)
                    else:
                        decomp = stacked_decomposition(
                            [net.readout(t.task_id) for t in prior], config.readout_rel_tol
                        )
                    logger.info(f"Task {task.task_id}: readout range rank {decomp.rank} of {decomp.dim}")
                    options["projector"] = projection_spec(decomp, config.alpha, config.beta)
            elif config.method == Method.ewc:
                ewc_states.append(create_ewc_state(net, prior[-1], config.lam, config.batch_size))
                options["ewc_states"] = tuple(ewc_states)
                stiffness = config.lr * float(np.max(sum(s.lam * s.fisher for s in ewc_states)))
                if stiffness > 2.0:
                    logger.warning(
                        f"Task {task.task_id}: lr * lambda * max F = {stiffness:.3e} exceeds 2, "
                        "the penalty step is unstable"
                    )
            elif config.method == Method.freeze_backbone:
                options["freeze_backbone"] = True

            net, logs = train_task(net, task, config, **options)
            epoch_logs.extend(logs)
            net.freeze_readout(task.task_id)
            accuracy_matrix.append([accuracy(net, t.val, t.task_id) for t in tasks[: index + 1]])
            proj = options.get("error_proj")
            if proj is not None and proj.empty_steps:
                logger.warning(f"Task {task.task_id}: {proj.empty_steps} of {proj.steps} steps had no admissible error direction")

        stage = "diagnostics"
        h_after = hidden_activations(net, first.val.pixels)
        logits_after = forward(net, first.val.pixels, first.task_id)[1]
        record_disp = displacement(h_before, h_after, _readout_one_decomposition(net, config))
        record = RunRecord(
            run_id=run_id,
            config=config,
            stability=accuracy_matrix[-1][0],
            plasticity=accuracy_matrix[-1][-1],
            task1_accuracy_before=task1_before,
            accuracy_matrix=accuracy_matrix,
            epoch_logs=epoch_logs,
            displacement=record_disp,
            logit_drift_max=float(np.max(np.abs(logits_after - logits_before), initial=0.0)),
            wallclock_s=time.perf_counter() - started if config.record_wallclock else 0.0,
        )

        stage = "baseline"
        if baseline is None and config.method != Method.none:
            baseline = run_experiment(baseline_config(config), tasks=tasks, persist=persist)
        record = label_case(record, baseline or record)

        if persist:
            stage = "persist"
            save_record(record, output_dir)
            extras = {}
            for state in ewc_states:
                extras[f"fisher/{state.task_id}"] = state.fisher
                extras[f"anchor/{state.task_id}"] = state.anchor
            save_checkpoint(net, output_dir / "checkpoints" / f"{run_id}.rdac", extras)
    except Exception as e:
        if persist:
            _write_partial(output_dir, config, stage, e)
        raise

    logger.info(
        f"Run {run_id}: stability {record.stability:.4f}, plasticity {record.plasticity:.4f}, "
        f"d_range {record.displacement.d_range_mean:.3e}, d_null {record.displacement.d_null_mean:.3e}"
    )
    return record


def save_record(record: RunRecord, output_dir: Path) -> Path:
    path = Path(output_dir) / "runs" / f"{record.run_id}.json"
    atomic_write_text(path, record.model_dump_json(indent=2, by_alias=True))
    logger.info(f"Wrote {path}")
    return path


# =========================
# Sweeps
# =========================


def sweep_grid(
    base_config: RunConfig,
    grid: GridSpec,
    workers: int = 1,
    tasks: Optional[Sequence[TaskDataset]] = None,
) -> SweepTable:
    """
    Run every grid point against one shared baseline. Failed points are kept as
    rows with an error; the metrics table is written before PartialSweepError
    is raised for them.
    """
    cache_path, output_dir = _resolve_paths(base_config)
    if tasks is None:
        tasks = load_tasks(cache_path)
        _check_provenance(cache_path, base_config)

    points = grid.points()
    configs = []
    for point in points:
        try:
            configs.append(base_config.with_overrides(**point))
        except ValueError as e:
            raise ConfigError(f"grid point {point} is not a valid run configuration: {e}")
    logger.info(f"Sweep over {list(grid.axes)}: {len(points)} runs on {workers} workers")

    baseline = run_experiment(baseline_config(base_config), tasks=tasks)

    def run_point(config: RunConfig) -> RunRecord:
        return run_experiment(config, baseline=baseline, tasks=tasks)

    rows: list[Optional[SweepRow]] = [None] * len(points)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        future_to_index = {executor.submit(run_point, config): i for i, config in enumerate(configs)}
        for done, future in enumerate(as_completed(future_to_index), start=1):
            i = future_to_index[future]
            params = {k: (v.value if isinstance(v, Method) else v) for k, v in points[i].items()}
            try:
                rows[i] = SweepRow(run_id=configs[i].run_id(), params=params, record=future.result())
            except Exception as e:
                logger.warning(f"Sweep point {params} failed: {e}")
                rows[i] = SweepRow(run_id=configs[i].run_id(), params=params, error=str(e))
            logger.info(f"Sweep progress: {done}/{len(points)}")

    table = SweepTable(axes=list(grid.axes), rows=rows)
    emit_report(table.records(), output_dir)
    atomic_write_text(output_dir / "sweep.json", table.model_dump_json(indent=2, by_alias=True))
    if table.failed:
        raise PartialSweepError(table.failed, len(rows))
    return table
