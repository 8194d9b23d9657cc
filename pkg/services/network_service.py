# services/network_service.py
"""
Bias-free linear networks with one shared backbone and one readout per task.

Row-vector convention throughout: a batch is b x x, hidden activations are
``h = x @ W_H.T`` and logits are ``h @ W_R.T``. Gradients are batch means.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

from frameworks.storage import decode_array, encode_array, read_container, write_container
from models.datasets import Batch, ImageSet
from models.errors import CacheError, ContractViolation, ShapeError, UnknownTaskError
from services.linalg import Matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetDims:
    """Input width, hidden widths (1 or 3 layers) and per-task output widths."""

    input_dim: int = 784
    hidden: tuple[int, ...] = (11,)
    outputs: tuple[int, ...] = (5, 5)

    def __post_init__(self) -> None:
        sizes = (self.input_dim, *self.hidden, *self.outputs)
        if any(s < 1 for s in sizes):
            raise ValueError(f"all dimensions must be positive, got {sizes}")
        if len(self.hidden) not in (1, 3):
            raise ValueError(f"supported depths are 1 and 3 hidden layers, got {len(self.hidden)}")
        if not self.outputs:
            raise ValueError("at least one task readout is required")


@dataclass(eq=False)
class _Network:
    hidden: list[Matrix]
    readouts: dict[int, Matrix]
    frozen_readouts: set[int] = field(default_factory=set)

    @property
    def input_dim(self) -> int:
        return int(self.hidden[0].shape[1])

    @property
    def width(self) -> int:
        """Width of the pre-readout layer."""
        return int(self.hidden[-1].shape[0])

    @property
    def task_ids(self) -> list[int]:
        return sorted(self.readouts)

    def readout(self, task_id: int) -> Matrix:
        try:
            return self.readouts[task_id]
        except KeyError:
            raise UnknownTaskError(f"no readout for task {task_id}; known tasks {self.task_ids}")

    def freeze_readout(self, task_id: int) -> None:
        self.readout(task_id)
        self.frozen_readouts.add(task_id)
        logger.debug(f"Readout {task_id} frozen")

    def copy(self) -> "_Network":
        return copy.deepcopy(self)


class LinearNet(_Network):
    """``o = x W_H^T W_R^T`` with a single shared hidden map."""

    @property
    def w_h(self) -> Matrix:
        return self.hidden[0]


class ThreeLayerNet(_Network):
    """``o = x W_H1^T W_H2^T W_H3^T W_R^T``."""

    @property
    def w_h1(self) -> Matrix:
        return self.hidden[0]

    @property
    def w_h2(self) -> Matrix:
        return self.hidden[1]

    @property
    def w_h3(self) -> Matrix:
        return self.hidden[2]


Network = Union[LinearNet, ThreeLayerNet]


@dataclass(frozen=True)
class Gradients:
    """
    Batch-mean gradients. ``hidden`` lines up with ``net.hidden``; a ``None``
    entry leaves that layer untouched by ``sgd_step``.
    """

    hidden: tuple[Optional[Matrix], ...]
    readout: Optional[Matrix]
    task_id: int
    loss: float = 0.0

    @property
    def d_w_h(self) -> Optional[Matrix]:
        return self.hidden[0]

    @property
    def d_readout(self) -> Optional[Matrix]:
        return self.readout

    def with_hidden(self, hidden: Sequence[Optional[Matrix]]) -> "Gradients":
        return dataclasses.replace(self, hidden=tuple(hidden))


def _uniform(rng: np.random.Generator, rows: int, fan_in: int) -> Matrix:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(rows, fan_in))


def init_net(dims: NetDims, seed: int) -> Network:
    """Weights drawn from U[-1/sqrt(fan_in), +1/sqrt(fan_in)], layer by layer, then readouts."""
    rng = np.random.default_rng(seed)
    hidden = []
    fan_in = dims.input_dim
    for width in dims.hidden:
        hidden.append(_uniform(rng, width, fan_in))
        fan_in = width
    readouts = {k: _uniform(rng, o, fan_in) for k, o in enumerate(dims.outputs, start=1)}
    cls = LinearNet if len(dims.hidden) == 1 else ThreeLayerNet
    logger.debug(f"Initialized {cls.__name__} {dims} with seed {seed}")
    return cls(hidden=hidden, readouts=readouts)


def _layer_activations(net: Network, inputs: Matrix) -> list[Matrix]:
    if inputs.ndim != 2 or inputs.shape[1] != net.input_dim:
        raise ShapeError("inputs do not match the network input width", inputs.shape, net.hidden[0].shape)
    activations = [inputs]
    for weight in net.hidden:
        activations.append(activations[-1] @ weight.T)
    return activations


def forward(net: Network, inputs: Matrix, task_id: int) -> tuple[Matrix, Matrix]:
    """Return ``(pre-readout activations, logits)`` for ``task_id``."""
    w_r = net.readout(task_id)
    hidden = _layer_activations(net, inputs)[-1]
    return hidden, hidden @ w_r.T


def hidden_activations(net: Network, inputs: Matrix) -> Matrix:
    return _layer_activations(net, inputs)[-1]


def softmax(logits: Matrix) -> Matrix:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_ce(logits: Matrix, labels: npt.ArrayLike) -> tuple[float, Matrix]:
    """
    Mean cross-entropy of a row-wise softmax and its gradient with respect to
    the logits, ``e_o = (softmax - onehot) / b``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    b, o = logits.shape
    if labels.shape != (b,) or (b and (labels.min() < 0 or labels.max() >= o)):
        raise ValueError(f"labels must be {b} integers in [0, {o})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    loss = float(-log_probs[rows, labels].mean())
    e_o = np.exp(log_probs)
    e_o[rows, labels] -= 1.0
    return loss, e_o / b


def _check_readout(net: Network, task_id: int, include_readout: bool) -> Matrix:
    w_r = net.readout(task_id)
    if include_readout and task_id in net.frozen_readouts:
        raise ContractViolation(f"readout {task_id} is frozen; its gradient cannot be requested")
    return w_r


def grads_linear(net: LinearNet, batch: Batch, *, include_readout: bool = True) -> Gradients:
    """
    Analytic gradients of the batch-mean cross-entropy:
    ``d_readout = e_o^T h`` and ``d_w_h = (e_o W_R)^T x``.
    """
    w_r = _check_readout(net, batch.task_id, include_readout)
    hidden = batch.inputs @ net.w_h.T
    loss, e_o = softmax_ce(hidden @ w_r.T, batch.labels)
    d_readout = e_o.T @ hidden if include_readout else None
    d_w_h = (e_o @ w_r).T @ batch.inputs
    return Gradients(hidden=(d_w_h,), readout=d_readout, task_id=batch.task_id, loss=loss)


def grads_three_layer(
    net: ThreeLayerNet,
    batch: Batch,
    e_o_override: Optional[Matrix] = None,
    *,
    include_readout: bool = True,
) -> Gradients:
    """
    Backpropagated gradients of the three-layer network.

    When ``e_o_override`` is given it replaces the loss-derived error rows for
    the hidden-layer gradients; the readout gradient always uses the true error.
    """
    w_r = _check_readout(net, batch.task_id, include_readout)
    x, h1, h2, h3 = _layer_activations(net, batch.inputs)
    loss, e_o = softmax_ce(h3 @ w_r.T, batch.labels)

    error = e_o
    if e_o_override is not None:
        if e_o_override.shape != e_o.shape:
            raise ShapeError("e_o override does not match the batch error", e_o_override.shape, e_o.shape)
        error = e_o_override

    g3 = error @ w_r
    d_w_h3 = g3.T @ h2
    g2 = g3 @ net.w_h3
    d_w_h2 = g2.T @ h1
    g1 = g2 @ net.w_h2
    d_w_h1 = g1.T @ x
    d_readout = e_o.T @ h3 if include_readout else None
    return Gradients(
        hidden=(d_w_h1, d_w_h2, d_w_h3), readout=d_readout, task_id=batch.task_id, loss=loss
    )


def compute_grads(net: Network, batch: Batch, *, include_readout: bool = True) -> Gradients:
    if isinstance(net, ThreeLayerNet):
        return grads_three_layer(net, batch, include_readout=include_readout)
    return grads_linear(net, batch, include_readout=include_readout)


def sgd_step(net: Network, grads: Gradients, lr: float) -> Network:
    """``w <- w - lr * grad`` for every supplied, unfrozen parameter."""
    if len(grads.hidden) != len(net.hidden):
        raise ShapeError("gradient depth does not match the network", (len(grads.hidden),), (len(net.hidden),))
    for i, grad in enumerate(grads.hidden):
        if grad is not None:
            net.hidden[i] = net.hidden[i] - lr * grad
    if grads.readout is not None:
        if grads.task_id in net.frozen_readouts:
            logger.debug(f"Skipping update of frozen readout {grads.task_id}")
        else:
            net.readouts[grads.task_id] = net.readouts[grads.task_id] - lr * grads.readout
    return net


def predict(net: Network, inputs: Matrix, task_id: int) -> npt.NDArray[np.int64]:
    return np.argmax(forward(net, inputs, task_id)[1], axis=1)


def accuracy(net: Network, images: ImageSet, task_id: int) -> float:
    if images.count == 0:
        return 0.0
    return float(np.mean(predict(net, images.pixels, task_id) == images.labels))


# =========================
# Checkpoints
# =========================


def save_checkpoint(net: Network, path: Path, extras: Optional[dict[str, Matrix]] = None) -> None:
    """Store every weight matrix (and optional extra matrices) as named container sections."""
    extras = extras or {}
    manifest = {
        "kind": "network",
        "class": type(net).__name__,
        "hidden": [list(w.shape) for w in net.hidden],
        "readouts": {str(k): list(w.shape) for k, w in net.readouts.items()},
        "frozen": sorted(net.frozen_readouts),
        "extras": {name: list(m.shape) for name, m in extras.items()},
    }
    sections = {"manifest": json.dumps(manifest, sort_keys=True).encode("utf-8")}
    for i, weight in enumerate(net.hidden):
        sections[f"hidden/{i}"] = encode_array(weight)
    for task_id, weight in net.readouts.items():
        sections[f"readout/{task_id}"] = encode_array(weight)
    for name, matrix in extras.items():
        sections[f"extra/{name}"] = encode_array(matrix)
    write_container(path, sections)


def load_checkpoint(path: Path) -> tuple[Network, dict[str, Matrix]]:
    sections = read_container(path)
    try:
        manifest = json.loads(sections["manifest"].decode("utf-8"))
        if manifest.get("kind") != "network":
            raise CacheError(f"{path} holds {manifest.get('kind')!r}, expected 'network'")
        hidden = [
            decode_array(sections[f"hidden/{i}"], tuple(shape)) for i, shape in enumerate(manifest["hidden"])
        ]
        readouts = {
            int(k): decode_array(sections[f"readout/{k}"], tuple(shape))
            for k, shape in manifest["readouts"].items()
        }
        extras = {
            name: decode_array(sections[f"extra/{name}"], tuple(shape))
            for name, shape in manifest["extras"].items()
        }
    except (KeyError, ValueError) as e:
        raise CacheError(f"checkpoint {path} is incomplete ({e})")
    cls = ThreeLayerNet if manifest["class"] == "ThreeLayerNet" else LinearNet
    net = cls(hidden=hidden, readouts=readouts, frozen_readouts=set(manifest["frozen"]))
    return net, extras
