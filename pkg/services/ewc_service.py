# services/ewc_service.py
"""Diagonal-Fisher Elastic Weight Consolidation on the shared hidden layer."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from models.datasets import Batch, TaskDataset
from models.errors import ShapeError
from services.linalg import Matrix
from services.network_service import LinearNet, grads_linear

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EwcState:
    """Importance ``fisher`` and anchor weights ``anchor`` of one finished task."""

    fisher: Matrix
    anchor: Matrix
    lam: float
    task_id: int = 1

    def __post_init__(self) -> None:
        if self.fisher.shape != self.anchor.shape:
            raise ShapeError("fisher and anchor differ in shape", self.fisher.shape, self.anchor.shape)
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if np.any(self.fisher < 0):
            raise ValueError("fisher entries must be non-negative")
        for name in ("fisher", "anchor"):
            frozen = np.array(getattr(self, name), dtype=np.float64, copy=True)
            frozen.setflags(write=False)
            object.__setattr__(self, name, frozen)


def fisher_diag(net: LinearNet, task: TaskDataset, batch_size: int = 16) -> Matrix:
    """
    ``F = sum_batches (dW_H)^2 / (N * b)`` over the task's training set in stored
    order, with N the number of batches and b the batch size. Gradients are batch means.
    """
    train = task.train
    if train.count == 0:
        raise ValueError(f"task {task.task_id} has no training samples to estimate the Fisher from")
    total = np.zeros_like(net.w_h)
    n_batches = 0
    for start in range(0, train.count, batch_size):
        stop = min(start + batch_size, train.count)
        batch = Batch(train.pixels[start:stop], train.labels[start:stop], task.task_id)
        grads = grads_linear(net, batch, include_readout=False)
        total += grads.d_w_h**2
        n_batches += 1
    fisher = total / (n_batches * batch_size)
    logger.info(
        f"Fisher for task {task.task_id} from {n_batches} batches: "
        f"mean {fisher.mean():.3e}, max {fisher.max():.3e}"
    )
    return fisher


def create_ewc_state(net: LinearNet, task: TaskDataset, lam: float, batch_size: int = 16) -> EwcState:
    return EwcState(
        fisher=fisher_diag(net, task, batch_size), anchor=net.w_h.copy(), lam=float(lam), task_id=task.task_id
    )


def ewc_penalized_grad(d_w_h: Matrix, state: EwcState, w_h_current: Matrix) -> Matrix:
    """Gradient of ``loss + (lam/2) * sum F (w - w*)^2`` given the gradient of the loss."""
    if d_w_h.shape != state.fisher.shape or w_h_current.shape != state.anchor.shape:
        raise ShapeError("EWC state does not match the hidden layer", d_w_h.shape, state.fisher.shape)
    if state.lam == 0.0:
        return d_w_h
    return d_w_h + state.lam * state.fisher * (w_h_current - state.anchor)


def ewc_penalty(state: EwcState, w_h_current: Matrix) -> float:
    return float(0.5 * state.lam * np.sum(state.fisher * (w_h_current - state.anchor) ** 2))


def apply_ewc(d_w_h: Matrix, states: Sequence[EwcState], w_h_current: Matrix) -> Matrix:
    """One penalty per finished task."""
    for state in states:
        d_w_h = ewc_penalized_grad(d_w_h, state, w_h_current)
    return d_w_h
