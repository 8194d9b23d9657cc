# tests/test_network.py
import math

import numpy as np
import pytest

from models.datasets import Batch
from models.errors import ContractViolation, ShapeError, UnknownTaskError
from services.network_service import (
    Gradients,
    LinearNet,
    NetDims,
    ThreeLayerNet,
    forward,
    grads_linear,
    grads_three_layer,
    init_net,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    softmax,
    softmax_ce,
)


def _loss(net, batch):
    return softmax_ce(forward(net, batch.inputs, batch.task_id)[1], batch.labels)[0]


def _numeric_grad(net, batch, matrix, step=1e-6):
    grad = np.zeros_like(matrix)
    for index in np.ndindex(matrix.shape):
        original = matrix[index]
        matrix[index] = original + step
        plus = _loss(net, batch)
        matrix[index] = original - step
        minus = _loss(net, batch)
        matrix[index] = original
        grad[index] = (plus - minus) / (2 * step)
    return grad


def _batch(rng, b, x, o, task_id=1):
    return Batch(rng.standard_normal((b, x)), rng.integers(0, o, size=b), task_id)


def test_init_is_seeded_and_bounded():
    dims = NetDims(input_dim=16, hidden=(11,), outputs=(3, 4))
    first, second = init_net(dims, 3), init_net(dims, 3)
    assert isinstance(first, LinearNet)
    assert np.array_equal(first.w_h, second.w_h)
    assert np.array_equal(first.readout(2), second.readout(2))
    assert first.w_h.shape == (11, 16) and first.readout(2).shape == (4, 11)
    assert np.all(np.abs(first.w_h) <= 1 / math.sqrt(16))
    assert np.all(np.abs(first.readout(1)) <= 1 / math.sqrt(11))
    assert not np.array_equal(first.w_h, init_net(dims, 4).w_h)


def test_three_layer_dims():
    net = init_net(NetDims(input_dim=6, hidden=(5, 4, 3), outputs=(1, 4)), 0)
    assert isinstance(net, ThreeLayerNet)
    assert [w.shape for w in net.hidden] == [(5, 6), (4, 5), (3, 4)]
    assert net.width == 3
    with pytest.raises(ValueError):
        NetDims(hidden=(4, 4))


def test_forward_unknown_task(rng):
    net = init_net(NetDims(input_dim=4, hidden=(3,), outputs=(2,)), 0)
    with pytest.raises(UnknownTaskError):
        forward(net, rng.standard_normal((2, 4)), 7)
    with pytest.raises(ShapeError):
        forward(net, rng.standard_normal((2, 5)), 1)


def test_softmax_ce_uniform_logits():
    loss, e_o = softmax_ce(np.zeros((2, 4)), np.array([1, 3]))
    assert loss == pytest.approx(math.log(4))
    expected = np.full((2, 4), 0.25)
    expected[0, 1] -= 1.0
    expected[1, 3] -= 1.0
    np.testing.assert_allclose(e_o, expected / 2)


def test_softmax_ce_is_shift_invariant(rng):
    logits = rng.standard_normal((5, 3))
    labels = rng.integers(0, 3, size=5)
    base = softmax_ce(logits, labels)
    shifted = softmax_ce(logits + rng.standard_normal((5, 1)) * 50, labels)
    assert shifted[0] == pytest.approx(base[0], rel=1e-12)
    np.testing.assert_allclose(shifted[1], base[1], atol=1e-14)


def test_softmax_ce_large_logits_stay_finite():
    loss, e_o = softmax_ce(np.array([[1000.0, 0.0]]), np.array([1]))
    assert loss == pytest.approx(1000.0)
    assert np.all(np.isfinite(e_o))


def test_softmax_rows_sum_to_one(rng):
    probs = softmax(rng.standard_normal((40, 7)) * 20)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all(probs >= 0)


def test_softmax_ce_saturated_logits():
    logits = np.array([[50.0, 0.0, 0.0, 0.0]])
    loss, e_o = softmax_ce(logits, np.array([0]))
    assert 0 <= loss < 1e-20
    np.testing.assert_allclose(e_o, 0.0, atol=1e-20)


def test_forward_is_linear_in_inputs(rng):
    for hidden in ((7,), (5, 4, 3)):
        net = init_net(NetDims(input_dim=6, hidden=hidden, outputs=(3,)), 1)
        x, y = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
        a, b = 1.7, -0.4
        h_mix, z_mix = forward(net, a * x + b * y, 1)
        h_x, z_x = forward(net, x, 1)
        h_y, z_y = forward(net, y, 1)
        np.testing.assert_allclose(h_mix, a * h_x + b * h_y, rtol=0, atol=1e-10)
        np.testing.assert_allclose(z_mix, a * z_x + b * z_y, rtol=0, atol=1e-10)


def test_gradients_are_batch_means(rng):
    net = init_net(NetDims(input_dim=5, hidden=(4,), outputs=(3,)), 2)
    batch = _batch(rng, 6, 5, 3)
    doubled = Batch(np.vstack([batch.inputs, batch.inputs]), np.concatenate([batch.labels, batch.labels]), 1)
    single, twice = grads_linear(net, batch), grads_linear(net, doubled)
    np.testing.assert_allclose(twice.d_w_h, single.d_w_h, rtol=0, atol=1e-14)
    np.testing.assert_allclose(twice.d_readout, single.d_readout, rtol=0, atol=1e-14)
    assert twice.loss == pytest.approx(single.loss, rel=1e-12)


def test_softmax_ce_rejects_bad_labels():
    with pytest.raises(ValueError):
        softmax_ce(np.zeros((2, 3)), np.array([0, 3]))


def test_linear_gradients_match_finite_differences(rng):
    for trial in range(50):
        x, h, o, b = rng.integers(2, 7), rng.integers(2, 6), rng.integers(2, 5), rng.integers(1, 6)
        net = init_net(NetDims(input_dim=x, hidden=(h,), outputs=(o,)), trial)
        batch = _batch(rng, b, x, o)
        grads = grads_linear(net, batch)
        np.testing.assert_allclose(grads.d_w_h, _numeric_grad(net, batch, net.hidden[0]), rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(
            grads.d_readout, _numeric_grad(net, batch, net.readouts[1]), rtol=1e-5, atol=1e-8
        )
        assert grads.loss == pytest.approx(_loss(net, batch))


def test_three_layer_gradients_match_finite_differences(rng):
    for trial in range(50):
        x = rng.integers(2, 6)
        widths = tuple(int(w) for w in rng.integers(2, 5, size=3))
        o, b = rng.integers(2, 4), rng.integers(1, 5)
        net = init_net(NetDims(input_dim=x, hidden=widths, outputs=(o,)), trial)
        batch = _batch(rng, b, x, o)
        grads = grads_three_layer(net, batch)
        for layer in range(3):
            np.testing.assert_allclose(
                grads.hidden[layer], _numeric_grad(net, batch, net.hidden[layer]), rtol=1e-5, atol=1e-8
            )
        np.testing.assert_allclose(grads.d_readout, _numeric_grad(net, batch, net.readouts[1]), rtol=1e-5, atol=1e-8)


def test_error_override_changes_hidden_gradients_only(rng):
    net = init_net(NetDims(input_dim=4, hidden=(3, 3, 3), outputs=(2,)), 1)
    batch = _batch(rng, 3, 4, 2)
    plain = grads_three_layer(net, batch)
    zeroed = grads_three_layer(net, batch, e_o_override=np.zeros((3, 2)))
    assert all(np.all(g == 0) for g in zeroed.hidden)
    np.testing.assert_array_equal(zeroed.d_readout, plain.d_readout)
    with pytest.raises(ShapeError):
        grads_three_layer(net, batch, e_o_override=np.zeros((2, 2)))


def test_sgd_step_updates_and_skips():
    net = LinearNet(hidden=[np.ones((2, 2))], readouts={1: np.ones((2, 2))})
    grads = Gradients(hidden=(np.full((2, 2), 2.0),), readout=np.full((2, 2), 4.0), task_id=1)
    sgd_step(net, grads, 0.5)
    np.testing.assert_array_equal(net.w_h, np.zeros((2, 2)))
    np.testing.assert_array_equal(net.readout(1), -np.ones((2, 2)))

    sgd_step(net, grads.with_hidden([None]), 0.5)
    np.testing.assert_array_equal(net.w_h, np.zeros((2, 2)))


def test_frozen_readout_is_not_trained(rng):
    net = init_net(NetDims(input_dim=4, hidden=(3,), outputs=(2, 2)), 0)
    net.freeze_readout(1)
    batch = _batch(rng, 4, 4, 2, task_id=1)
    with pytest.raises(ContractViolation):
        grads_linear(net, batch)
    grads = grads_linear(net, batch, include_readout=False)
    assert grads.d_readout is None

    before = net.readout(1).copy()
    forced = Gradients(hidden=(None,), readout=np.ones((2, 3)), task_id=1)
    sgd_step(net, forced, 0.1)
    np.testing.assert_array_equal(net.readout(1), before)


def test_checkpoint_roundtrip(tmp_path):
    net = init_net(NetDims(input_dim=5, hidden=(3, 3, 2), outputs=(2, 3)), 9)
    net.freeze_readout(1)
    extras = {"fisher/1": np.arange(6.0).reshape(2, 3)}
    save_checkpoint(net, tmp_path / "net.rdac", extras)
    loaded, loaded_extras = load_checkpoint(tmp_path / "net.rdac")
    assert isinstance(loaded, ThreeLayerNet)
    assert loaded.frozen_readouts == {1}
    assert all(np.array_equal(a, b) for a, b in zip(net.hidden, loaded.hidden))
    assert all(np.array_equal(net.readouts[k], loaded.readouts[k]) for k in net.readouts)
    np.testing.assert_array_equal(loaded_extras["fisher/1"], extras["fisher/1"])
