"""Category-decoupled 3D fusion, volume aggregation and the prediction head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bev import ConvStack
from .errors import ShapeError
from .numerics import Conv3d, LinearLayer, attention, relu, sigmoid, upsample_nearest


@dataclass
class HeightHead:
    """Conv stack [C, X, Y] -> [Z, X, Y] followed by a sigmoid."""

    convs: ConvStack

    def __call__(self, bev: np.ndarray) -> np.ndarray:
        return sigmoid(self.convs(bev))


def fuse(c_ins, c_scn, h_ins, h_scn) -> np.ndarray:
    """Broadcast each BEV stream along its height profile and sum: [C, X, Y, Z]."""
    if c_ins.shape != c_scn.shape or h_ins.shape != h_scn.shape or h_ins.shape[1:] != c_ins.shape[1:]:
        raise ShapeError(
            f"fuse shapes {c_ins.shape}, {c_scn.shape}, {h_ins.shape}, {h_scn.shape}"
        )
    hi = np.moveaxis(h_ins, 0, -1)[None]
    hs = np.moveaxis(h_scn, 0, -1)[None]
    return c_ins[..., None] * hi + c_scn[..., None] * hs


@dataclass
class ResBlock3d:
    conv1: Conv3d
    conv2: Conv3d

    def __call__(self, x):
        return x + self.conv2(relu(self.conv1(x)))


@dataclass
class Aggregator:
    """Local residual 3D convs and global plane attention, blended by a voxel gate.

    The global path lets every voxel attend over the volume pooled along X
    (left view) and along Y (front view).
    """

    local: list[ResBlock3d]
    wq: LinearLayer
    wk: LinearLayer
    wv: LinearLayer
    gate: LinearLayer  # 2C -> 1

    def local_path(self, v):
        for block in self.local:
            v = block(v)
        return v

    def global_path(self, v):
        c = v.shape[0]
        left = v.mean(axis=1).reshape(c, -1).T
        front = v.mean(axis=2).reshape(c, -1).T
        planes = np.concatenate([left, front], axis=0)
        voxels = v.reshape(c, -1).T
        out = attention(self.wq(voxels), self.wk(planes), self.wv(planes))
        return out.T.reshape(v.shape)

    def __call__(self, v):
        loc = self.local_path(v)
        glob = self.global_path(v)
        c = v.shape[0]
        both = np.concatenate([loc.reshape(c, -1), glob.reshape(c, -1)], axis=0).T
        g = sigmoid(self.gate(both)).T.reshape((1,) + v.shape[1:])
        return (g * loc + (1 - g) * glob).astype(v.dtype)


def aggregate(v: np.ndarray, weights: Aggregator) -> np.ndarray:
    return weights(v)


def predict(v: np.ndarray, head: LinearLayer, factor: int = 2) -> np.ndarray:
    """Per-voxel class logits after nearest-neighbour upsampling: [K, fX, fY, fZ]."""
    c = v.shape[0]
    # the per-voxel map commutes with nearest-neighbour repetition
    logits = head(v.reshape(c, -1).T).T.reshape((head.out_features,) + v.shape[1:])
    return upsample_nearest(logits, factor, (1, 2, 3))
