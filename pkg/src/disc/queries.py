"""Instance and scene query initialization on the BEV plane."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bev import ConvStack
from .errors import ConfigError, ShapeError
from .numerics import LayerNormParams, LinearLayer, relu

ROLES = ("instance", "scene", "image")


@dataclass
class QuerySet:
    features: np.ndarray  # [N, C]
    ref_points: np.ndarray  # [N, 2] (x, y) in BEV cell units
    role: str

    def __post_init__(self):
        self.ref_points = np.asarray(self.ref_points, dtype=np.float64).reshape(-1, 2)
        if self.features.ndim != 2 or self.features.shape[0] != self.ref_points.shape[0]:
            raise ShapeError(f"{self.features.shape[0]} features vs {len(self.ref_points)} refs")
        if self.role not in ROLES:
            raise ValueError(f"unknown query role {self.role!r}")

    def __len__(self) -> int:
        return self.features.shape[0]

    def with_features(self, features: np.ndarray) -> "QuerySet":
        return QuerySet(features, self.ref_points, self.role)


def block_count(shape: tuple[int, int], k: int) -> int:
    x, y = shape
    if k <= 0 or x % k or y % k:
        raise ConfigError(f"block size {k} does not tile a {x}x{y} grid")
    return (x // k) * (y // k)


def select_instance_refs(probs: np.ndarray, k: int, n: int) -> np.ndarray:
    """Block-voting neighbour suppression.

    Each k x k block keeps its highest-probability cell; the n strongest
    block winners are returned as cell centers [n, 2]. Ties go to the lowest
    row-major flat index at both stages.
    """
    probs = np.asarray(probs)
    x, y = probs.shape
    nb = block_count((x, y), k)
    if not 0 <= n <= nb:
        raise ValueError(f"asked for {n} queries but only {nb} blocks exist")
    blocks = probs.reshape(x // k, k, y // k, k).transpose(0, 2, 1, 3).reshape(nb, k * k)
    local = np.argmax(blocks, axis=1)
    bi, bj = np.divmod(np.arange(nb), y // k)
    li, lj = np.divmod(local, k)
    ci, cj = bi * k + li, bj * k + lj
    best = blocks[np.arange(nb), local]
    order = np.lexsort((ci * y + cj, -best))[:n]
    return np.stack([ci[order] + 0.5, cj[order] + 0.5], axis=-1).astype(np.float64)


def init_instance_queries(bev: np.ndarray, refs: np.ndarray) -> QuerySet:
    refs = np.asarray(refs, dtype=np.float64).reshape(-1, 2)
    cells = np.floor(refs).astype(np.int64)
    _, x, y = bev.shape
    if np.any(cells < 0) or np.any(cells[:, 0] >= x) or np.any(cells[:, 1] >= y):
        raise ValueError("instance reference outside the BEV grid")
    return QuerySet(bev[:, cells[:, 0], cells[:, 1]].T.copy(), refs, "instance")


def check_patch(shape: tuple[int, int], patch: int) -> None:
    if patch <= 0 or patch & (patch - 1):
        raise ConfigError(f"patch size {patch} is not a power of two")
    if shape[0] % patch or shape[1] % patch:
        raise ConfigError(f"patch size {patch} does not tile {shape[0]}x{shape[1]}")


def patch_reduce(feature_map: np.ndarray, patch: int, reducer: ConvStack) -> np.ndarray:
    """Reduce each patch x patch tile of ``feature_map`` [C, A, B] to one vector.

    Tiles are processed independently (zero padding at tile borders) and
    returned in row-major tile order as [A/P * B/P, C].
    """
    c, a, b = feature_map.shape
    check_patch((a, b), patch)
    if 2 ** len(reducer.layers) != patch:
        raise ConfigError(f"reducer has {len(reducer.layers)} layers for patch {patch}")
    tiles = feature_map.reshape(c, a // patch, patch, b // patch, patch).transpose(1, 3, 0, 2, 4)
    tiles = tiles.reshape(-1, c, patch, patch)
    out = [reducer(t).reshape(-1) for t in tiles]
    return np.stack(out).astype(feature_map.dtype)


def patch_centers(a: int, b: int, patch: int) -> np.ndarray:
    bi, bj = np.meshgrid(np.arange(a // patch), np.arange(b // patch), indexing="ij")
    return np.stack([(bi.ravel() + 0.5) * patch, (bj.ravel() + 0.5) * patch], axis=-1)


def init_scene_queries(bev: np.ndarray, patch: int, reducer: ConvStack) -> QuerySet:
    _, x, y = bev.shape
    feats = patch_reduce(bev, patch, reducer)
    return QuerySet(feats, patch_centers(x, y, patch), "scene")


def sinusoidal_encoding(refs: np.ndarray, extent_x: float, extent_y: float, channels: int) -> np.ndarray:
    """[N, C] encoding laid out as sin(x), cos(x), sin(y), cos(y), C/4 frequencies each."""
    if channels % 4:
        raise ConfigError(f"embedding channels {channels} not divisible by 4")
    refs = np.asarray(refs, dtype=np.float64).reshape(-1, 2)
    nf = channels // 4
    freqs = 10000.0 ** (-np.arange(nf) / nf)
    ax = 2 * np.pi * refs[:, :1] / extent_x * freqs
    ay = 2 * np.pi * refs[:, 1:] / extent_y * freqs
    return np.concatenate([np.sin(ax), np.cos(ax), np.sin(ay), np.cos(ay)], axis=-1)


@dataclass
class PositionalMLP:
    fc1: LinearLayer
    fc2: LinearLayer
    norm: LayerNormParams

    def __call__(self, enc: np.ndarray) -> np.ndarray:
        return self.norm(self.fc2(relu(self.fc1(enc))))


def positional_embedding_many(refs, extent_x: float, extent_y: float, mlp: PositionalMLP) -> np.ndarray:
    channels = mlp.fc1.in_features
    enc = sinusoidal_encoding(refs, extent_x, extent_y, channels).astype(mlp.fc1.weight.dtype)
    return mlp(enc)


def positional_embedding(ref, extent_x: float, extent_y: float, mlp: PositionalMLP) -> np.ndarray:
    return positional_embedding_many(np.asarray(ref)[None], extent_x, extent_y, mlp)[0]
