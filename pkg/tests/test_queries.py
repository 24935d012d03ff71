import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from disc import oracles
from disc.bev import ConvStack
from disc.errors import ConfigError
from disc.numerics import Conv2d, identity_conv2d, init_layer_norm, init_linear
from disc.queries import (
    PositionalMLP,
    init_instance_queries,
    init_scene_queries,
    positional_embedding_many,
    select_instance_refs,
    sinusoidal_encoding,
)


def test_select_examples():
    p = np.zeros((4, 4))
    p[0, 1], p[3, 2] = 0.9, 0.8
    np.testing.assert_array_equal(select_instance_refs(p, 2, 2), [[0.5, 1.5], [3.5, 2.5]])
    np.testing.assert_array_equal(select_instance_refs(np.full((4, 4), 0.3), 2, 1), [[0.5, 0.5]])
    refs = select_instance_refs(np.random.default_rng(0).random((6, 4)), 2, 6)
    assert len({(int(x) // 2, int(y) // 2) for x, y in refs}) == 6


def test_select_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        select_instance_refs(np.zeros((5, 4)), 2, 1)
    with pytest.raises(ValueError):
        select_instance_refs(np.zeros((4, 4)), 2, 5)


@st.composite
def prob_maps(draw):
    k = draw(st.sampled_from([1, 2, 4]))
    shape = (k * draw(st.integers(1, 3)), k * draw(st.integers(1, 3)))
    probs = draw(arrays(np.float64, shape, elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1)))
    n = draw(st.integers(0, (shape[0] // k) * (shape[1] // k)))
    return probs, k, n


@given(prob_maps())
def test_select_matches_oracle_and_is_scale_invariant(case):
    probs, k, n = case
    got = select_instance_refs(probs, k, n)
    np.testing.assert_array_equal(got, np.array(oracles.select_instance_refs(probs, k, n)).reshape(-1, 2))
    np.testing.assert_array_equal(got, select_instance_refs(0.5 * probs, k, n))


def test_instance_gather():
    bev = np.zeros((3, 4, 4))
    bev[:, 0, 1] = [1, 0, 0]
    q = init_instance_queries(bev, [[0.5, 1.5], [0.5, 1.5]])
    np.testing.assert_array_equal(q.features, [[1, 0, 0], [1, 0, 0]])
    bev = np.random.default_rng(2).normal(size=(3, 4, 5))
    refs = np.array([[3.5, 4.5], [1.5, 0.5]])
    q = init_instance_queries(bev, refs)
    for row, (x, y) in zip(q.features, refs):
        np.testing.assert_array_equal(row, [bev[c, int(x), int(y)] for c in range(3)])


def test_scene_queries_counts_and_centers():
    bev = np.random.default_rng(0).normal(size=(2, 8, 8)).astype(np.float32)
    reducer = ConvStack([identity_conv2d(2, stride=2), identity_conv2d(2, stride=2)])
    q = init_scene_queries(bev, 4, reducer)
    assert len(q) == 4
    np.testing.assert_array_equal(q.ref_points, [[2, 2], [2, 6], [6, 2], [6, 6]])
    q1 = init_scene_queries(bev, 1, ConvStack([]))
    np.testing.assert_array_equal(q1.features, bev.reshape(2, -1).T)


def test_scene_queries_match_conv_oracle(rng):
    bev = rng.normal(size=(2, 4, 8))
    convs = [Conv2d(rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2), 2) for _ in range(2)]
    q = init_scene_queries(bev, 4, ConvStack(convs))
    for t, (bi, bj) in enumerate([(0, 0), (0, 1)]):
        tile = bev[:, 4 * bi:4 * bi + 4, 4 * bj:4 * bj + 4]
        h = oracles.conv2d(tile, convs[0].weight, convs[0].bias, 2)
        h = oracles.conv2d(np.maximum(h, 0), convs[1].weight, convs[1].bias, 2)
        np.testing.assert_allclose(q.features[t], h.ravel(), atol=1e-10)


def test_scene_queries_reject_bad_patch():
    with pytest.raises(ConfigError):
        init_scene_queries(np.zeros((2, 8, 8)), 3, ConvStack([]))


def test_sinusoidal_examples():
    enc = sinusoidal_encoding(np.array([[0.0, 0.0]]), 8, 8, 16)[0]
    np.testing.assert_array_equal(enc[0:4], 0)
    np.testing.assert_array_equal(enc[4:8], 1)
    np.testing.assert_array_equal(enc[8:12], 0)
    np.testing.assert_array_equal(enc[12:16], 1)


@given(arrays(np.float64, (5, 2), elements=st.floats(0, 32)))
def test_sinusoidal_norm_is_constant(refs):
    enc = sinusoidal_encoding(refs, 32, 32, 16)
    np.testing.assert_allclose((enc**2).sum(axis=1), 8.0, atol=1e-9)


def test_embedding_deterministic(rng):
    mlp = PositionalMLP(init_linear(rng, 8, 8), init_linear(rng, 8, 8), init_layer_norm(8))
    e = positional_embedding_many(np.array([[1.5, 2.5], [1.5, 2.5]]), 8, 8, mlp)
    np.testing.assert_array_equal(e[0], e[1])
