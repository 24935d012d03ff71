"""Coarse-to-fine bird's-eye-view generation.

Image features are lifted into a voxel grid with a predicted depth
distribution, voxels on the observed surface are refined with deformable
attention over the image pyramid, and the refined volume is max-pooled
along Z and split into instance and scene BEV maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .geometry import (
    CameraRig,
    DepthBinning,
    SceneVolumeSpec,
    generate_frustum,
    pixel_to_level,
    sample_pixels,
    world_to_voxel_many,
)
from .numerics import Conv2d, LinearLayer, bilinear_sample_many, max_pool_axis, relu, softmax


@dataclass
class FeaturePyramid:
    levels: list[np.ndarray]  # each [C, H_l, W_l]
    strides: list[int]  # descending: levels[0] is the coarsest

    def __post_init__(self):
        if len(self.levels) != len(self.strides) or not self.levels:
            raise ShapeError("pyramid needs one stride per level")
        if len({lvl.shape[0] for lvl in self.levels}) != 1:
            raise ShapeError("pyramid levels must share a channel count")
        if list(self.strides) != sorted(self.strides, reverse=True):
            raise ShapeError(f"pyramid strides must be descending, got {self.strides}")

    @property
    def channels(self) -> int:
        return self.levels[0].shape[0]

    @property
    def smallest(self) -> np.ndarray:
        return self.levels[0]


@dataclass
class VoxelFeatureGrid:
    features: np.ndarray  # [C, X, Y, Z]
    spec: SceneVolumeSpec

    def __post_init__(self):
        if tuple(self.features.shape[1:]) != tuple(self.spec.dims):
            raise ShapeError(f"voxel features {self.features.shape} vs dims {self.spec.dims}")


@dataclass
class ProposalSet:
    indices: np.ndarray  # [P, 3] int
    pixels: np.ndarray  # [P, 2] source pixel (u, v)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class DeformableAttnWeights:
    offset_net: LinearLayer  # C -> levels * K * 2
    weight_net: LinearLayer  # C -> levels * K
    value_net: LinearLayer  # C -> C
    points: int = 4


@dataclass
class ConvStack:
    """3x3 convolutions with ReLU between consecutive layers."""

    layers: list[Conv2d]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        for i, conv in enumerate(self.layers):
            if i:
                x = relu(x)
            x = conv(x)
        return x


def lift_splat(features, depth_logits, rig: CameraRig, binning: DepthBinning,
               spec: SceneVolumeSpec, stride: int) -> VoxelFeatureGrid:
    """Scatter-add depth-weighted image features into the voxel grid.

    ``features`` [C, h, w] and ``depth_logits`` [D, h, w] live on the strided
    pixel grid of ``rig`` (h = H // stride, w = W // stride).
    """
    frustum = generate_frustum(rig, binning, stride)
    c, h, w = features.shape
    if (h, w) != frustum.grid_shape or depth_logits.shape != (binning.bins, h, w):
        raise ShapeError(
            f"lift inputs {features.shape}/{depth_logits.shape} vs grid {frustum.grid_shape}"
        )
    prob = softmax(depth_logits.astype(np.float64), axis=0)
    idx, valid = world_to_voxel_many(spec, frustum.world)
    col, row = frustum.cells[valid, 0], frustum.cells[valid, 1]
    mass = prob[frustum.bins[valid], row, col]  # [N]
    contrib = features[:, row, col].astype(np.float64) * mass  # [C, N]
    nx, ny, nz = spec.dims
    flat = np.ravel_multi_index(tuple(idx[valid].T), (nx, ny, nz))
    out = np.zeros((c, nx * ny * nz))
    for ch in range(c):
        out[ch] = np.bincount(flat, weights=contrib[ch], minlength=nx * ny * nz)
    return VoxelFeatureGrid(out.reshape(c, nx, ny, nz).astype(features.dtype), spec)


def depth_guided_proposals(depth_map, rig: CameraRig, spec: SceneVolumeSpec, stride: int) -> ProposalSet:
    """Voxels hit by the known-depth surface; the first pixel in row-major order wins."""
    cols, rows = sample_pixels(rig.width, rig.height, stride)
    uu, vv = np.meshgrid(cols, rows)
    uu, vv = uu.ravel(), vv.ravel()
    d = np.asarray(depth_map, dtype=np.float64)[vv, uu]
    keep = d > 0
    if not keep.any():
        return ProposalSet(np.zeros((0, 3), np.int64), np.zeros((0, 2)))
    pix = np.stack([uu[keep], vv[keep]], axis=-1).astype(np.float64)
    idx, valid = world_to_voxel_many(spec, rig.unproject_many(pix, d[keep]))
    idx, pix = idx[valid], pix[valid]
    _, first = np.unique(idx, axis=0, return_index=True)
    first = np.sort(first)
    return ProposalSet(idx[first], pix[first])


def project_pyramid(pyramid: FeaturePyramid, value_net: LinearLayer) -> list[np.ndarray]:
    """Apply the value projection to every pyramid cell, keeping [C, H, W] layout."""
    return [
        np.einsum("chw,oc->ohw", lvl, value_net.weight) + value_net.bias[:, None, None]
        for lvl in pyramid.levels
    ]


def deformable_attention_many(queries, pyramid: FeaturePyramid, refs, nets: DeformableAttnWeights,
                              projected: list[np.ndarray] | None = None) -> np.ndarray:
    """Batched deformable attention.

    queries [N, C]; refs [N, L, 2] reference (u, v) on each level, in that
    level's pixel units. Samples falling off a level contribute nothing.
    """
    queries = np.atleast_2d(queries)
    n = queries.shape[0]
    n_lvl, k = len(pyramid.levels), nets.points
    refs = np.asarray(refs, dtype=np.float64).reshape(n, n_lvl, 2)
    if projected is None:
        projected = project_pyramid(pyramid, nets.value_net)
    offsets = nets.offset_net(queries).reshape(n, n_lvl, k, 2)
    attn = softmax(nets.weight_net(queries), axis=-1).reshape(n, n_lvl, k)
    out = np.zeros((n, projected[0].shape[0]), dtype=np.float64)
    for lvl in range(n_lvl):
        pts = refs[:, lvl, None, :] + offsets[:, lvl]  # [N, K, 2]
        sampled = bilinear_sample_many(projected[lvl], pts.reshape(-1, 2)).reshape(n, k, -1)
        out += np.einsum("nk,nkc->nc", attn[:, lvl], sampled)
    return out.astype(queries.dtype)


def deformable_attention(query, pyramid: FeaturePyramid, ref_point_image, nets: DeformableAttnWeights) -> np.ndarray:
    return deformable_attention_many(np.asarray(query)[None], pyramid, np.asarray(ref_point_image)[None], nets)[0]


def refine_proposals(coarse: VoxelFeatureGrid, proposals: ProposalSet, pyramid: FeaturePyramid,
                     rig: CameraRig, nets: DeformableAttnWeights) -> VoxelFeatureGrid:
    fine = coarse.features.copy()
    if len(proposals) == 0:
        return VoxelFeatureGrid(fine, coarse.spec)
    i, j, k = proposals.indices.T
    uv, _, in_front = rig.project_many(coarse.spec.voxel_centers(proposals.indices))
    i, j, k, uv = i[in_front], j[in_front], k[in_front], uv[in_front]
    gathered = coarse.features[:, i, j, k].T
    refs = np.stack([pixel_to_level(uv, s) for s in pyramid.strides], axis=1)
    fine[:, i, j, k] = deformable_attention_many(gathered, pyramid, refs, nets).T
    return VoxelFeatureGrid(fine, coarse.spec)


def pool_to_bev(fine: VoxelFeatureGrid) -> np.ndarray:
    return max_pool_axis(fine.features, axis=3)


def split_bev(bev, conv_ins: ConvStack, conv_scn: ConvStack) -> tuple[np.ndarray, np.ndarray]:
    return conv_ins(bev), conv_scn(bev)
