"""Analytic gradients of every op against central differences."""
from __future__ import annotations

import numpy as np
import pytest

from advframe import autodiff as ad


def _check(build, params, **kw):
    """``build(leaves)`` returns a scalar node; finite-difference all inputs."""
    def loss_fn(p):
        leaves = {k: ad.leaf(v, k) for k, v in p.items()}
        out = build(leaves)
        ad.backward(out)
        return float(out.value), {k: (n.grad if n.grad is not None else np.zeros_like(n.value))
                                  for k, n in leaves.items()}
    return ad.finite_diff_check(loss_fn, params, per_param=kw.pop("per_param", 20), **kw)


def _dot(node, w):
    """Scalar ``sum(node * w)`` built from graph ops."""
    prod = ad.mul(node, w)
    flat_w = ad.leaf(np.ones((prod.value.shape[-1], 1)))
    s = ad.linear(prod, flat_w)
    while s.value.ndim > 0:
        s = ad.Node(s.value.sum(), (s,), lambda g, shape=s.shape: (np.full(shape, g),))
    return s


def test_linear_tanh_sigmoid(rng):
    params = {"x": rng.normal(size=(3, 4)), "w": rng.normal(size=(4, 5)), "b": rng.normal(size=5)}
    w = ad.leaf(rng.normal(size=(3, 5)))
    _check(lambda L: _dot(ad.sigmoid(ad.tanh(ad.linear(L["x"], L["w"], L["b"]))), w), params)


def test_add_mul_scale_broadcast(rng):
    params = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(3,))}
    w = ad.leaf(rng.normal(size=(2, 3)))
    _check(lambda L: _dot(ad.scale(ad.mul(ad.add(L["a"], L["b"]), L["a"]), -1.7), w), params)


def test_embedding_repeated_indices(rng):
    params = {"E": rng.normal(size=(5, 3))}
    idx = np.array([[0, 2, 2], [4, 0, 1]])
    w = ad.leaf(rng.normal(size=(2, 3, 3)))
    _check(lambda L: _dot(ad.embedding(L["E"], idx), w), params)


def test_concat_and_mask(rng):
    params = {"a": rng.normal(size=(2, 3, 2)), "b": rng.normal(size=(2, 3, 4))}
    mask = np.array([[1, 1, 0], [1, 1, 1]], dtype=float)
    w = ad.leaf(rng.normal(size=(2, 3, 6)))
    _check(lambda L: _dot(ad.mask_time(ad.concat([L["a"], L["b"]]), mask), w), params)


@pytest.mark.parametrize("reverse", [False, True])
def test_gru_with_padding(rng, reverse):
    B, T, D, H = 2, 4, 3, 2
    params = {"x": rng.normal(size=(B, T, D)), "W": rng.normal(size=(D, 3 * H)) * 0.5,
              "U": rng.normal(size=(H, 3 * H)) * 0.5, "b": rng.normal(size=3 * H) * 0.1}
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=float)
    w = ad.leaf(rng.normal(size=(B, T, H)))
    _check(lambda L: _dot(ad.gru(L["x"], mask, L["W"], L["U"], L["b"], reverse=reverse), w),
           params, tolerance=1e-6)


def test_gru_padding_is_inert(rng):
    """Padded steps never change the states of real steps (their outputs are masked later)."""
    D, H = 3, 2
    W, U, b = (ad.leaf(rng.normal(size=s)) for s in [(D, 3 * H), (H, 3 * H), (3 * H,)])
    x = rng.normal(size=(1, 3, D))
    padded = np.concatenate([x, rng.normal(size=(1, 2, D))], axis=1)
    for reverse in (False, True):
        short = ad.gru(ad.leaf(x), np.ones((1, 3)), W, U, b, reverse=reverse).value
        long = ad.gru(ad.leaf(padded), np.array([[1, 1, 1, 0, 0.]]), W, U, b, reverse=reverse).value
        np.testing.assert_allclose(long[:, :3], short, atol=1e-14)


def test_conv1d_and_masked_max(rng):
    params = {"x": rng.normal(size=(2, 5, 3)), "W": rng.normal(size=(3, 3, 4)), "b": rng.normal(size=4)}
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=float)
    w = ad.leaf(rng.normal(size=(2, 4)))
    _check(lambda L: _dot(ad.masked_max(ad.tanh(ad.conv1d(L["x"], L["W"], L["b"])), mask), w), params)


def test_masked_max_ignores_padding():
    x = ad.leaf(np.array([[[1.0], [5.0], [9.0]]]))
    out = ad.masked_max(x, np.array([[1, 1, 0.0]]))
    assert out.value.tolist() == [[5.0]]


def test_softmax_cross_entropy_weighted(rng):
    params = {"z": rng.normal(size=(6, 4))}
    targets = np.array([0, 3, 1, 1, 2, 0])
    weights = np.array([1, 1, 0, 1, 1, 0.0])
    _check(lambda L: ad.softmax_cross_entropy(L["z"], targets, weights), params)


def test_softmax_cross_entropy_closed_forms():
    uniform = ad.softmax_cross_entropy(ad.leaf(np.zeros((3, 2))), np.array([0, 1, 0]))
    assert uniform.value == pytest.approx(np.log(2.0), abs=1e-15)
    sure = ad.softmax_cross_entropy(ad.leaf(np.array([[800.0, -800.0]])), np.array([0]))
    assert sure.value == pytest.approx(0.0, abs=1e-300)


def test_grad_reverse_identity_forward_scaled_backward(rng):
    x = ad.leaf(rng.normal(size=(2, 3)))
    lam = 0.37
    y = ad.grad_reverse(x, lam)
    assert np.array_equal(y.value, x.value)
    seed = rng.normal(size=(2, 3))
    ad.backward(y, seed)
    np.testing.assert_array_equal(x.grad, -lam * seed)


def test_grad_reverse_at_zero_is_signed_zero():
    up = np.array([1.0, -2.0])
    out = ad.grl_backward(up, 0.0)
    assert np.all(out == 0)


def test_dropout_is_identity_without_rng(rng):
    x = ad.leaf(rng.normal(size=(2, 3)))
    assert np.array_equal(ad.dropout(x, 0.5, None).value, x.value)


def test_dropout_scales_kept_units(rng):
    x = ad.leaf(np.ones((200, 50)))
    y = ad.dropout(x, 0.2, np.random.default_rng(0)).value
    kept = y[y != 0]
    np.testing.assert_allclose(kept, 1 / 0.8)
    assert abs((y == 0).mean() - 0.2) < 0.02


def test_finite_diff_check_detects_wrong_gradient(rng):
    params = {"w": rng.normal(size=4)}

    def bad(p):
        return float((p["w"] ** 2).sum()), {"w": 3 * p["w"]}

    with pytest.raises(ad.GradientCheckError):
        ad.finite_diff_check(bad, params, n_samples=4)


def test_backward_twice_resets_gradients(rng):
    x = ad.leaf(rng.normal(size=3))
    w = ad.leaf(np.ones(3))
    y = _dot(x, w)
    ad.backward(y)
    first = x.grad.copy()
    ad.backward(y)
    np.testing.assert_array_equal(x.grad, first)
