import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from disc import oracles
from disc.errors import ShapeError
from disc.numerics import (
    LinearLayer,
    attention,
    attention_weights,
    bilinear_sample,
    bilinear_sample_many,
    conv2d,
    conv3d,
    identity_conv2d,
    layer_norm,
    max_pool_axis,
    softmax,
)

finite = st.floats(-50, 50, allow_nan=False, width=64)


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros(3)), [1 / 3] * 3)
    np.testing.assert_allclose(softmax(np.array([math.log(2), 0.0])), [2 / 3, 1 / 3])
    np.testing.assert_allclose(softmax(np.array([1000.0, 0.0])), [1, 0], atol=1e-6)


def test_softmax_rejects_bad_axis():
    with pytest.raises(ShapeError):
        softmax(np.zeros((2, 2)), axis=2)


@given(arrays(np.float64, (4, 5), elements=finite), st.integers(0, 1))
def test_softmax_sums_to_one(x, axis):
    np.testing.assert_allclose(softmax(x, axis).sum(axis=axis), 1.0, atol=1e-6)


def test_bilinear_examples():
    const = np.full((3, 4, 5), 2.5)
    np.testing.assert_allclose(bilinear_sample(const, (1.3, 2.7)), [2.5] * 3)
    fm = np.array([[[0.0, 1.0], [2.0, 3.0]]])
    assert bilinear_sample(fm, (0.5, 0.5))[0] == pytest.approx(1.5)
    np.testing.assert_array_equal(bilinear_sample(fm, (-5, -5)), [0.0])


@given(arrays(np.float64, (2, 4, 5), elements=finite),
       st.floats(-1, 5, allow_nan=False), st.floats(-1, 4, allow_nan=False))
def test_bilinear_matches_oracle(fm, u, v):
    np.testing.assert_allclose(bilinear_sample(fm, (u, v)), oracles.bilinear(fm, u, v), atol=1e-9)


@given(arrays(np.float64, (1, 3, 4), elements=finite), st.integers(0, 2), st.floats(0, 1))
def test_bilinear_exact_on_grid_and_linear_between(fm, row, t):
    assert bilinear_sample(fm, (1.0, float(row)))[0] == fm[0, row, 1]
    got = bilinear_sample(fm, (1.0 + t, float(row)))[0]
    assert got == pytest.approx((1 - t) * fm[0, row, 1] + t * fm[0, row, 2], abs=1e-9)


def test_bilinear_many_is_batched_single():
    fm = np.random.default_rng(0).normal(size=(3, 5, 6))
    pts = np.array([[0.2, 0.3], [4.9, 3.1], [7.0, 1.0]])
    many = bilinear_sample_many(fm, pts)
    for p, row in zip(pts, many):
        np.testing.assert_array_equal(row, bilinear_sample(fm, tuple(p)))


def test_attention_examples(rng):
    q = rng.normal(size=(3, 4))
    v = rng.normal(size=(1, 4))
    np.testing.assert_allclose(attention(q, rng.normal(size=(1, 4)), v), np.repeat(v, 3, 0))
    k = np.tile(rng.normal(size=(1, 4)), (3, 1))
    v = rng.normal(size=(3, 4))
    np.testing.assert_allclose(attention(q, k, v), np.tile(v.mean(0), (3, 1)))
    k, v = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    np.testing.assert_allclose(attention(q, k, v, mask=[True, False]), np.tile(v[0], (3, 1)))


def test_attention_all_masked_raises():
    with pytest.raises(ValueError):
        attention(np.ones((1, 2)), np.ones((2, 2)), np.ones((2, 2)), mask=[False, False])


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (5, 4), elements=finite),
       arrays(np.float64, (5, 2), elements=finite), st.lists(st.booleans(), min_size=5, max_size=5))
def test_attention_rows_convex_and_match_oracle(q, k, v, mask):
    mask[0] = True
    w = attention_weights(q, k, mask)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(w[:, ~np.array(mask)] == 0)
    out = attention(q, k, v, mask)
    kept = v[np.array(mask)]
    assert np.all(out >= kept.min(axis=0) - 1e-9) and np.all(out <= kept.max(axis=0) + 1e-9)
    np.testing.assert_allclose(out, oracles.attention(q, k, v, mask), atol=1e-9)


def test_max_pool_examples():
    np.testing.assert_array_equal(max_pool_axis(np.array([[1, 5, 2], [0, 0, 0]]), 1), [5, 0])
    np.testing.assert_array_equal(max_pool_axis(np.full((2, 3, 4), 7.0), 2), np.full((2, 3), 7.0))
    x = np.random.default_rng(0).normal(size=(3, 1, 4))
    np.testing.assert_array_equal(max_pool_axis(x, 1), x[:, 0])


@given(arrays(np.float64, (3, 4, 2), elements=finite), st.integers(0, 2))
def test_max_pool_matches_oracle(x, axis):
    np.testing.assert_array_equal(max_pool_axis(x, axis), oracles.max_pool(x, axis))


def test_layer_norm_examples():
    one, zero = np.ones(3), np.zeros(3)
    np.testing.assert_allclose(layer_norm(np.full((1, 3), 4.0), one, zero), 0.0)
    np.testing.assert_allclose(layer_norm(np.array([[1.0, -1.0]]), np.ones(2), np.zeros(2)), [[1, -1]], atol=1e-5)
    x = np.random.default_rng(1).normal(size=(2, 3))
    g, b = np.array([2.0, 3.0, 4.0]), np.array([1.0, 0.0, -1.0])
    np.testing.assert_allclose(layer_norm(x, g, b), g * layer_norm(x, one, zero) + b)


def test_linear_rejects_mismatched_bias():
    with pytest.raises(ShapeError):
        LinearLayer(np.zeros((3, 2)), np.zeros(2))


def test_identity_conv_and_bias_field(rng):
    x = rng.normal(size=(3, 5, 6)).astype(np.float32)
    np.testing.assert_array_equal(identity_conv2d(3)(x), x)
    bias = np.array([1.0, -2.0])
    out = conv2d(np.zeros((3, 4, 4)), rng.normal(size=(2, 3, 3, 3)), bias)
    np.testing.assert_array_equal(out, np.broadcast_to(bias[:, None, None], (2, 4, 4)))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_oracle(rng, stride):
    x, w, b = rng.normal(size=(2, 5, 6)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    np.testing.assert_allclose(conv2d(x, w, b, stride), oracles.conv2d(x, w, b, stride), atol=1e-10)


def test_conv3d_matches_oracle(rng):
    x, w, b = rng.normal(size=(2, 3, 4, 3)), rng.normal(size=(2, 2, 3, 3, 3)), rng.normal(size=2)
    np.testing.assert_allclose(conv3d(x, w, b), oracles.conv3d(x, w, b), atol=1e-10)
