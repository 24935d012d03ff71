"""Tensor primitives shared by every stage of the network.

Tensors are plain ``numpy.ndarray`` objects of dtype float32. All functions
here are pure: they never modify their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeError

DTYPE = np.float32
LN_EPS = 1e-5


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def check_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {name}")


def _check_axis(x: np.ndarray, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {x.ndim}")
    return axis % x.ndim


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x)
    axis = _check_axis(x, axis)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def max_pool_axis(x: np.ndarray, axis: int) -> np.ndarray:
    x = np.asarray(x)
    axis = _check_axis(x, axis)
    return np.max(x, axis=axis)


def layer_norm(x: np.ndarray, gain: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Normalize each row of ``x`` [N, C] to zero mean and unit variance."""
    x = np.asarray(x)
    if x.shape[-1] != gain.shape[-1] or gain.shape != shift.shape:
        raise ShapeError(f"layer_norm extents {x.shape} / {gain.shape} / {shift.shape}")
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * gain + shift


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bilinear_sample_many(feature_map: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Sample ``feature_map`` [C, H, W] at ``points`` [N, 2] of (u, v) pixel coords.

    ``u`` runs along W and ``v`` along H; integer coordinates hit cell centers
    exactly. Points outside ``[0, W-1] x [0, H-1]`` yield zero vectors.
    Returns [N, C].
    """
    c, h, w = feature_map.shape
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    u, v = points[:, 0], points[:, 1]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    out = np.zeros((points.shape[0], c), dtype=feature_map.dtype)
    if not inside.any():
        return out
    u, v = u[inside], v[inside]
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (u - x0)[:, None]
    fy = (v - y0)[:, None]
    fm = feature_map.transpose(1, 2, 0)
    val = (
        fm[y0, x0] * (1 - fx) * (1 - fy)
        + fm[y0, x1] * fx * (1 - fy)
        + fm[y1, x0] * (1 - fx) * fy
        + fm[y1, x1] * fx * fy
    )
    out[inside] = val.astype(feature_map.dtype)
    return out


def bilinear_sample(feature_map: np.ndarray, point: tuple[float, float]) -> np.ndarray:
    return bilinear_sample_many(feature_map, np.array([point]))[0]


def attention_weights(q, k, mask=None) -> np.ndarray:
    q = np.asarray(q)
    k = np.asarray(k)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key channels differ: {q.shape} vs {k.shape}")
    logits = q @ k.T / np.sqrt(q.shape[-1]).astype(q.dtype)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (k.shape[0],):
            raise ShapeError(f"mask shape {mask.shape} for {k.shape[0]} keys")
        if not mask.any():
            raise ValueError("attention: every key is masked")
        logits = np.where(mask[None, :], logits, -np.inf)
    w = softmax(logits, axis=-1)
    if mask is not None:
        w = np.where(mask[None, :], w, 0).astype(w.dtype)
    return w


def attention(q, k, v, mask=None) -> np.ndarray:
    """Scaled dot-product attention. ``mask[j]`` False removes key j entirely."""
    v = np.asarray(v)
    if v.shape[0] != np.shape(k)[0]:
        raise ShapeError(f"keys/values length differ: {np.shape(k)} vs {v.shape}")
    return attention_weights(q, k, mask) @ v


def _pad(x: np.ndarray, pad: int, n_spatial: int) -> np.ndarray:
    widths = [(0, 0)] * (x.ndim - n_spatial) + [(pad, pad)] * n_spatial
    return np.pad(x, widths)


def conv2d(x, weight, bias, stride: int = 1, padding: int | None = None) -> np.ndarray:
    """2-D cross-correlation of ``x`` [Cin, H, W] with ``weight`` [Cout, Cin, kh, kw]."""
    cout, cin, kh, kw = weight.shape
    if x.shape[0] != cin:
        raise ShapeError(f"conv2d input channels {x.shape[0]} != {cin}")
    if padding is None:
        padding = kh // 2
    xp = _pad(x, padding, 2)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    # win: [Cin, Ho, Wo, kh, kw]
    out = np.einsum("chwij,ocij->ohw", win, weight, optimize=True)
    return (out + bias[:, None, None]).astype(x.dtype)


def conv3d(x, weight, bias, padding: int | None = None) -> np.ndarray:
    """Stride-1 3-D cross-correlation of ``x`` [Cin, X, Y, Z] with ``weight`` [Cout, Cin, k, k, k]."""
    cout, cin, k0, k1, k2 = weight.shape
    if x.shape[0] != cin:
        raise ShapeError(f"conv3d input channels {x.shape[0]} != {cin}")
    if padding is None:
        padding = k0 // 2
    xp = _pad(x, padding, 3)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k0, k1, k2), axis=(1, 2, 3))
    ho, wo, do = win.shape[1:4]
    cols = win.transpose(1, 2, 3, 0, 4, 5, 6).reshape(ho * wo * do, cin * k0 * k1 * k2)
    out = cols @ weight.reshape(cout, -1).T + bias
    return out.T.reshape(cout, ho, wo, do).astype(x.dtype)


def upsample_nearest(x: np.ndarray, factor: int, axes) -> np.ndarray:
    for ax in axes:
        x = np.repeat(x, factor, axis=ax)
    return x


@dataclass
class LinearLayer:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"linear weight {self.weight.shape} / bias {self.bias.shape}")

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T + self.bias


@dataclass
class Conv2d:
    weight: np.ndarray  # [out, in, k, k]
    bias: np.ndarray
    stride: int = 1

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return conv2d(x, self.weight, self.bias, self.stride)


@dataclass
class Conv3d:
    weight: np.ndarray  # [out, in, k, k, k]
    bias: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return conv3d(x, self.weight, self.bias)


@dataclass
class LayerNormParams:
    gain: np.ndarray
    shift: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return layer_norm(x, self.gain, self.shift)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


def init_linear(rng: np.random.Generator, n_in: int, n_out: int) -> LinearLayer:
    return LinearLayer(_uniform(rng, n_in, (n_out, n_in)), _uniform(rng, n_in, (n_out,)))


def init_conv2d(rng, n_in: int, n_out: int, k: int = 3, stride: int = 1) -> Conv2d:
    fan_in = n_in * k * k
    return Conv2d(_uniform(rng, fan_in, (n_out, n_in, k, k)), _uniform(rng, fan_in, (n_out,)), stride)


def init_conv3d(rng, n_in: int, n_out: int, k: int = 3) -> Conv3d:
    fan_in = n_in * k**3
    return Conv3d(_uniform(rng, fan_in, (n_out, n_in, k, k, k)), _uniform(rng, fan_in, (n_out,)))


def init_layer_norm(c: int) -> LayerNormParams:
    return LayerNormParams(np.ones(c, DTYPE), np.zeros(c, DTYPE))


def identity_conv2d(c: int, k: int = 3, stride: int = 1) -> Conv2d:
    w = np.zeros((c, c, k, k), DTYPE)
    w[np.arange(c), np.arange(c), k // 2, k // 2] = 1
    return Conv2d(w, np.zeros(c, DTYPE), stride)


def identity_linear(c: int) -> LinearLayer:
    return LinearLayer(np.eye(c, dtype=DTYPE), np.zeros(c, DTYPE))
