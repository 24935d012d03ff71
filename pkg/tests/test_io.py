import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from disc import io


def test_tens1_layout():
    buf = io.encode_tensor(np.array([[1.0, 2.0, 3.0]], np.float32))
    assert buf[:5] == b"TENS1"
    assert buf[5] == 2
    assert struct.unpack("<2I", buf[6:14]) == (1, 3)
    assert struct.unpack("<3f", buf[14:]) == (1.0, 2.0, 3.0)


@given(arrays(np.float32, array_shapes(min_dims=1, max_dims=4, max_side=5),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_tens1_round_trip(x):
    back = io.decode_tensor(io.encode_tensor(x))
    assert back.dtype == np.float32 and back.shape == x.shape
    np.testing.assert_array_equal(back, x)


def test_tens1_rejects_bad_magic_and_truncation():
    buf = io.encode_tensor(np.zeros((2, 2), np.float32))
    with pytest.raises(ValueError):
        io.decode_tensor(b"XXXX1" + buf[5:])
    with pytest.raises(ValueError):
        io.decode_tensor(buf[:-1])


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(2, 20), st.data())
def test_sscv1_round_trip(x, y, z, k, data):
    labels = data.draw(arrays(np.uint8, (x, y, z), elements=st.integers(0, k - 1)))
    back, kk = io.decode_labels(io.encode_labels(labels, k))
    assert kk == k
    np.testing.assert_array_equal(back, labels)


def test_sscv1_keeps_ignore_and_rejects_out_of_range():
    labels = np.array([[[0, 255, 3]]], np.uint8)
    back, _ = io.decode_labels(io.encode_labels(labels, 4))
    np.testing.assert_array_equal(back, labels)
    with pytest.raises(ValueError):
        io.encode_labels(np.array([[[4]]], np.uint8), 4)


def test_files(tmp_path):
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    io.save_tensor(tmp_path / "a.tens1", x)
    np.testing.assert_array_equal(io.load_tensor(tmp_path / "a.tens1"), x)
    io.save_labels(tmp_path / "a.sscv1", np.ones((2, 2, 2), np.uint8), 3)
    assert io.load_labels(tmp_path / "a.sscv1")[1] == 3
