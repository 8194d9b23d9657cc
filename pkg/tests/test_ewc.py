# tests/test_ewc.py
import numpy as np
import pytest

from models.datasets import Batch, ImageSet, TaskDataset
from models.errors import ShapeError
from services.ewc_service import (
    EwcState,
    apply_ewc,
    create_ewc_state,
    ewc_penalized_grad,
    ewc_penalty,
    fisher_diag,
)
from services.network_service import LinearNet, NetDims, grads_linear, init_net
from tests.conftest import make_tasks


def _net(seed=0):
    return init_net(NetDims(input_dim=16, hidden=(11,), outputs=(3, 3)), seed)


def _doubled(task: TaskDataset) -> TaskDataset:
    train = task.train
    pixels = np.concatenate([train.pixels, train.pixels])
    labels = np.concatenate([train.labels, train.labels])
    doubled = ImageSet(pixels, labels, height=train.height, width=train.width, num_classes=train.num_classes)
    return TaskDataset(task_id=task.task_id, class_ids=task.class_ids, train=doubled, val=task.val)


def test_zero_readout_gives_zero_fisher():
    task = make_tasks()[0]
    net = LinearNet(hidden=[np.ones((11, 16))], readouts={1: np.zeros((3, 11))})
    np.testing.assert_array_equal(fisher_diag(net, task, 8), np.zeros((11, 16)))


def test_fisher_of_repeated_data_is_unchanged():
    # 60 samples, batch size 12: whole batches only, so doubling doubles the batch count too.
    task = make_tasks()[0]
    net = _net()
    np.testing.assert_allclose(fisher_diag(net, _doubled(task), 12), fisher_diag(net, task, 12), rtol=1e-12)


def test_fisher_matches_two_batch_formula():
    task = make_tasks(train_per_class=4)[0]
    net = _net(3)
    b = 6
    first = Batch(task.train.pixels[:b], task.train.labels[:b], 1)
    second = Batch(task.train.pixels[b:], task.train.labels[b:], 1)
    g1 = grads_linear(net, first, include_readout=False).d_w_h
    g2 = grads_linear(net, second, include_readout=False).d_w_h
    np.testing.assert_allclose(fisher_diag(net, task, b), (g1**2 + g2**2) / (2 * b), rtol=1e-12)
    assert np.all(fisher_diag(net, task, b) >= 0)


def test_create_state_snapshots_weights():
    task = make_tasks()[0]
    net = _net()
    state = create_ewc_state(net, task, lam=5.0, batch_size=8)
    net.hidden[0] += 1.0
    assert state.task_id == 1
    assert not np.array_equal(state.anchor, net.w_h)


def test_lambda_zero_is_a_no_op(rng):
    state = EwcState(fisher=np.ones((3, 4)), anchor=np.zeros((3, 4)), lam=0.0)
    d = rng.standard_normal((3, 4))
    assert ewc_penalized_grad(d, state, rng.standard_normal((3, 4))) is d


def test_at_anchor_gradient_is_unchanged(rng):
    anchor = rng.standard_normal((3, 4))
    state = EwcState(fisher=rng.uniform(0, 1, (3, 4)), anchor=anchor, lam=10.0)
    d = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(ewc_penalized_grad(d, state, anchor.copy()), d)


def test_penalized_grad_example():
    state = EwcState(fisher=np.ones((1, 1)), anchor=np.zeros((1, 1)), lam=2.0)
    out = ewc_penalized_grad(np.zeros((1, 1)), state, np.full((1, 1), 0.5))
    assert out[0, 0] == pytest.approx(1.0)


def test_penalty_gradient_matches_finite_differences(rng):
    state = EwcState(fisher=rng.uniform(0, 2, (4, 5)), anchor=rng.standard_normal((4, 5)), lam=3.0)
    w = rng.standard_normal((4, 5))
    analytic = ewc_penalized_grad(np.zeros((4, 5)), state, w)
    step = 1e-6
    numeric = np.zeros_like(w)
    for index in np.ndindex(w.shape):
        plus, minus = w.copy(), w.copy()
        plus[index] += step
        minus[index] -= step
        numeric[index] = (ewc_penalty(state, plus) - ewc_penalty(state, minus)) / (2 * step)
    np.testing.assert_allclose(analytic, numeric, atol=1e-6)


def test_penalties_of_several_tasks_add_up(rng):
    w = rng.standard_normal((2, 3))
    states = [
        EwcState(fisher=np.full((2, 3), 0.5), anchor=np.zeros((2, 3)), lam=1.0, task_id=1),
        EwcState(fisher=np.full((2, 3), 0.25), anchor=np.ones((2, 3)), lam=4.0, task_id=2),
    ]
    expected = 0.5 * w + 1.0 * (w - 1.0)
    np.testing.assert_allclose(apply_ewc(np.zeros((2, 3)), states, w), expected, atol=1e-14)


def test_state_is_read_only_and_validated():
    fisher = np.ones((2, 2))
    state = EwcState(fisher=fisher, anchor=np.zeros((2, 2)), lam=1.0)
    fisher[0, 0] = 7.0
    assert state.fisher[0, 0] == 1.0
    with pytest.raises(ValueError):
        state.fisher[0, 0] = 3.0
    with pytest.raises(ValueError):
        EwcState(fisher=-np.ones((2, 2)), anchor=np.zeros((2, 2)), lam=1.0)
    with pytest.raises(ValueError):
        EwcState(fisher=np.ones((2, 2)), anchor=np.zeros((2, 2)), lam=-1.0)
    with pytest.raises(ShapeError):
        EwcState(fisher=np.ones((2, 2)), anchor=np.zeros((2, 3)), lam=1.0)
    with pytest.raises(ShapeError):
        ewc_penalized_grad(np.zeros((3, 3)), state, np.zeros((2, 2)))
