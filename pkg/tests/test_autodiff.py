"""Gradient checks for the autodiff core against central finite differences."""

from __future__ import annotations

import numpy as np
import pytest

from renuance import autodiff as ad

from conftest import check_gradients


def check_op(fn, params, tol=1e-6):
    check_gradients(fn, params, tol=tol)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_elementwise_chain(rng):
    params = {
        "a": ad.parameter(rng.standard_normal((3, 4))),
        "b": ad.parameter(rng.standard_normal((3, 4))),
    }

    def fn():
        a, b = params["a"], params["b"]
        return ad.tensor_sum(ad.tanh(a * b + a - 0.5) / (ad.sigmoid(b) + 1.2))

    check_op(fn, params)


def test_matmul_and_reductions(rng):
    params = {
        "w": ad.parameter(rng.standard_normal((4, 5))),
        "x": ad.parameter(rng.standard_normal((3, 4))),
    }

    def fn():
        h = params["x"] @ params["w"]
        return ad.tensor_mean(h * h, axis=None) + ad.tensor_sum(ad.tensor_mean(h, axis=0))

    check_op(fn, params)


def test_log_softmax_and_softmax(rng):
    params = {"x": ad.parameter(rng.standard_normal((5, 7)))}
    weights = rng.standard_normal((5, 7))

    def fn():
        ls = ad.log_softmax(params["x"], axis=-1)
        sm = ad.softmax(params["x"] * 0.7, axis=-1)
        return ad.tensor_sum(ls * weights) + ad.tensor_sum(sm * weights)

    check_op(fn, params)


def test_softmax_rows_normalized(rng):
    x = ad.Tensor(rng.standard_normal((6, 9)))
    p = ad.softmax(x, axis=-1)
    np.testing.assert_allclose(p.value.sum(axis=-1), np.ones(6), atol=1e-12)


def test_concat_getitem_take_rows(rng):
    params = {
        "a": ad.parameter(rng.standard_normal((3, 4))),
        "b": ad.parameter(rng.standard_normal((2, 4))),
        "emb": ad.parameter(rng.standard_normal((6, 4))),
    }
    idx = np.array([0, 2, 2, 5])
    weights = rng.standard_normal((9, 4))

    def fn():
        joined = ad.concat([params["a"], params["b"], ad.take_rows(params["emb"], idx)], axis=0)
        sliced = joined[1:9]
        return ad.tensor_sum(sliced * weights[1:9]) + ad.tensor_sum(joined[0] * weights[0])

    check_op(fn, params)


def test_conv1d_gradients(rng):
    params = {
        "x": ad.parameter(rng.standard_normal((9, 3))),
        "w": ad.parameter(rng.standard_normal((4, 3, 5)) * 0.5),
        "b": ad.parameter(rng.standard_normal(4)),
    }
    readout = rng.standard_normal((5, 4))

    def fn():
        out = ad.conv1d(params["x"], params["w"], params["b"], stride=2, padding=2)
        return ad.tensor_sum(ad.tanh(out) * readout)

    out = ad.conv1d(params["x"], params["w"], params["b"], stride=2, padding=2)
    assert out.shape == (5, 4)  # floor((9 + 4 - 5)/2) + 1
    check_op(fn, params)


def test_conv1d_rejects_too_short():
    x = ad.Tensor(np.zeros((1, 2)))
    w = ad.Tensor(np.zeros((3, 2, 7)))
    b = ad.Tensor(np.zeros(3))
    with pytest.raises(ValueError, match="too short"):
        ad.conv1d(x, w, b, stride=2, padding=0)


def test_reshape_transpose(rng):
    params = {"x": ad.parameter(rng.standard_normal((4, 6)))}
    weights = rng.standard_normal((3, 8))

    def fn():
        r = ad.reshape(params["x"], (3, 8))
        t = ad.transpose(r)
        return ad.tensor_sum(ad.transpose(t) * weights)

    check_op(fn, params)


def test_constant_graph_is_pruned(rng):
    a = ad.Tensor(rng.standard_normal((3, 3)))
    b = ad.Tensor(rng.standard_normal((3, 3)))
    out = ad.tanh(a @ b + 1.0)
    assert not out.requires_grad
    assert out._parents == ()


def test_broadcast_gradients(rng):
    params = {
        "row": ad.parameter(rng.standard_normal((1, 5))),
        "col": ad.parameter(rng.standard_normal(5)),
    }
    x = rng.standard_normal((4, 5))

    def fn():
        return ad.tensor_sum((params["row"] + x) * params["col"])

    check_op(fn, params)


def test_adam_moves_parameters_and_zero_lr_is_identity(rng):
    t = ad.parameter(rng.standard_normal((3, 3)))
    params = {"t": t}
    before = t.value.copy()

    loss = ad.tensor_sum(t * t)
    loss.backward()
    opt = ad.AdamState()
    ad.adam_step(params, opt, step_size=0.0)
    np.testing.assert_array_equal(t.value, before)
    ad.adam_step(params, opt, step_size=0.1)
    assert not np.array_equal(t.value, before)


def test_clip_global_norm():
    t = ad.parameter(np.array([3.0, 4.0]))
    loss = ad.tensor_sum(t * np.array([1.0, 1.0]))
    loss.backward()
    t.grad = np.array([3.0, 4.0])
    norm = ad.clip_global_norm({"t": t}, max_norm=1.0)
    assert norm == pytest.approx(5.0)
    assert np.linalg.norm(t.grad) == pytest.approx(1.0)


def test_backward_requires_scalar():
    t = ad.parameter(np.zeros((2, 2)))
    with pytest.raises(ValueError, match="scalar"):
        t.backward()
