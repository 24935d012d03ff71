"""Dual-attention class decoder.

Each decoder layer runs a global scene layer (image cross attention with
random key masking, scene self attention, upsampling to a BEV map) and then
an adaptive instance layer (height-adaptive image cross attention, attention
into the fresh scene map, instance self attention, UNet-style propagation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bev import ConvStack, DeformableAttnWeights, FeaturePyramid, deformable_attention_many
from .errors import ShapeError
from .geometry import CameraRig, SceneVolumeSpec, pixel_to_level
from .numerics import (
    Conv2d,
    LayerNormParams,
    LinearLayer,
    attention,
    relu,
    sigmoid,
    upsample_nearest,
)
from .queries import PositionalMLP, QuerySet, positional_embedding_many


@dataclass
class HeightCandidateBank:
    heights: np.ndarray  # [M] meters above the volume floor, strictly increasing
    selector: LinearLayer  # C -> M
    n_sel: int = 2

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if np.any(np.diff(self.heights) <= 0):
            raise ValueError("height candidates must be strictly increasing")
        if not 1 <= self.n_sel <= len(self.heights):
            raise ValueError(f"n_sel={self.n_sel} with {len(self.heights)} candidates")
        if self.selector.out_features != len(self.heights):
            raise ShapeError("selector width differs from the candidate count")


def adaptive_height_sample_many(queries: np.ndarray, bank: HeightCandidateBank) -> tuple[np.ndarray, np.ndarray]:
    """Top-N candidate indices [N, n_sel] and their renormalized weights."""
    logits = bank.selector(np.atleast_2d(queries)).astype(np.float64)
    idx = np.argsort(-logits, axis=-1, kind="stable")[:, : bank.n_sel]
    chosen = np.take_along_axis(logits, idx, axis=-1)
    chosen = np.exp(chosen - chosen.max(axis=-1, keepdims=True))
    return idx, chosen / chosen.sum(axis=-1, keepdims=True)


def adaptive_height_sample(q: np.ndarray, bank: HeightCandidateBank) -> list[tuple[float, float]]:
    idx, w = adaptive_height_sample_many(q, bank)
    return [(float(bank.heights[i]), float(wj)) for i, wj in zip(idx[0], w[0])]


def _level_refs(rig: CameraRig, strides, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uv, _, in_front = rig.project_many(points)
    return np.stack([pixel_to_level(uv, s) for s in strides], axis=1), in_front


def instance_image_cross_attention_many(queries, refs_bev, heights: np.ndarray, weights: np.ndarray,
                                        pyramid: FeaturePyramid, rig: CameraRig, spec: SceneVolumeSpec,
                                        nets: DeformableAttnWeights,
                                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Weighted sum of deformable image attention at each query's selected heights.

    heights/weights are [N, J]. Heights whose point lies behind the camera
    contribute zero and their weight is not redistributed. When ``rng`` is
    given the 3D reference points are jittered uniformly within one voxel.
    """
    queries = np.atleast_2d(queries)
    n, j = heights.shape
    xy = spec.bev_to_world(refs_bev)  # [N, 2]
    pts = np.empty((n, j, 3))
    pts[..., :2] = xy[:, None, :]
    pts[..., 2] = spec.origin[2] + heights
    if rng is not None:
        half = spec.voxel_size / 2
        pts = pts + rng.uniform(-half, half, size=pts.shape)
    refs, in_front = _level_refs(rig, pyramid.strides, pts.reshape(-1, 3))
    q_rep = np.repeat(queries, j, axis=0)
    out = np.zeros((n * j, queries.shape[1]), dtype=np.float64)
    if in_front.any():
        out[in_front] = deformable_attention_many(q_rep[in_front], pyramid, refs[in_front], nets)
    out = out.reshape(n, j, -1) * weights[..., None]
    return out.sum(axis=1).astype(queries.dtype)


def instance_image_cross_attention(q, x_ins, heights: list[tuple[float, float]], pyramid, rig, spec, nets,
                                   rng=None) -> np.ndarray:
    h = np.array([[hj for hj, _ in heights]])
    w = np.array([[wj for _, wj in heights]])
    return instance_image_cross_attention_many(np.asarray(q)[None], np.asarray(x_ins)[None], h, w,
                                               pyramid, rig, spec, nets, rng)[0]


def bev_pyramid(bev: np.ndarray) -> FeaturePyramid:
    """View a [C, X, Y] BEV map as a one-level pyramid (rows = X, cols = Y)."""
    return FeaturePyramid([bev], [1])


def bev_sample_coords(refs_bev: np.ndarray) -> np.ndarray:
    """BEV cell-unit (x, y) -> (u, v) sampling coordinates on a [C, X, Y] map."""
    refs_bev = np.asarray(refs_bev, dtype=np.float64).reshape(-1, 2)
    return np.stack([refs_bev[:, 1] - 0.5, refs_bev[:, 0] - 0.5], axis=-1)


def instance_scene_attention_many(queries, refs_bev, c_scn: np.ndarray, nets: DeformableAttnWeights) -> np.ndarray:
    refs = bev_sample_coords(refs_bev)[:, None, :]
    return deformable_attention_many(queries, bev_pyramid(c_scn), refs, nets)


def instance_scene_attention(q, x_ins, c_scn, nets) -> np.ndarray:
    return instance_scene_attention_many(np.asarray(q)[None], np.asarray(x_ins)[None], c_scn, nets)[0]


@dataclass
class AttentionBlock:
    """Single-head attention with a residual connection and LayerNorm."""

    wq: LinearLayer
    wk: LinearLayer
    wv: LinearLayer
    wo: LinearLayer
    norm: LayerNormParams

    def __call__(self, x, kv, pos=None, mask=None) -> np.ndarray:
        xq = x if pos is None else x + pos
        out = self.wo(attention(self.wq(xq), self.wk(kv), self.wv(kv), mask))
        return self.norm(x + out)


@dataclass
class FeedForward:
    fc1: LinearLayer
    fc2: LinearLayer
    norm: LayerNormParams

    def __call__(self, x):
        return self.norm(x + self.fc2(relu(self.fc1(x))))


def self_attention(queries: QuerySet, block: AttentionBlock, pos: np.ndarray | None = None) -> QuerySet:
    """q = k = v = features + pos, then residual and LayerNorm; refs unchanged."""
    f = queries.features
    x = f if pos is None else f + pos
    out = block.wo(attention(block.wq(x), block.wk(x), block.wv(x)))
    return queries.with_features(block.norm(f + out))


def instance_self_attention(q_ins: QuerySet, block: AttentionBlock, pos=None) -> QuerySet:
    return self_attention(q_ins, block, pos)


def scene_self_attention(q_scn: QuerySet, block: AttentionBlock, pos=None) -> QuerySet:
    return self_attention(q_scn, block, pos)


def random_key_mask(n_keys: int, mask_ratio: float, rng: np.random.Generator | None) -> np.ndarray:
    """Keep-mask over keys with floor(mask_ratio * n_keys) keys dropped without replacement."""
    if not 0 <= mask_ratio < 1:
        raise ValueError(f"mask_ratio must lie in [0, 1), got {mask_ratio}")
    keep = np.ones(n_keys, dtype=bool)
    n_drop = int(np.floor(mask_ratio * n_keys))
    if n_drop and rng is not None:
        keep[rng.choice(n_keys, size=n_drop, replace=False)] = False
    return keep


def scene_image_cross_attention(q_scn: QuerySet, q_img: QuerySet, mask_ratio: float,
                                rng: np.random.Generator | None, block: AttentionBlock,
                                pos: np.ndarray | None = None) -> QuerySet:
    keep = random_key_mask(len(q_img), mask_ratio, rng)
    return q_scn.with_features(block(q_scn.features, q_img.features, pos=pos, mask=keep))


@dataclass
class UNetLite:
    enc: Conv2d
    down: Conv2d  # stride 2
    mid: Conv2d
    out: Conv2d

    def __call__(self, x):
        e = relu(self.enc(x))
        d = relu(self.mid(relu(self.down(e))))
        return self.out(upsample_nearest(d, 2, (1, 2)) + e)


def scatter_queries(q: QuerySet, nx: int, ny: int) -> np.ndarray:
    """Queries written into their BEV cells; later queries overwrite earlier ones."""
    grid = np.zeros((q.features.shape[1], nx, ny), dtype=q.features.dtype)
    cells = np.floor(q.ref_points).astype(np.int64)
    for (i, j), f in zip(cells, q.features):
        if not (0 <= i < nx and 0 <= j < ny):
            raise ValueError(f"query reference ({i}, {j}) outside the BEV grid")
        grid[:, i, j] = f
    return grid


def propagate_instance_to_bev(q_ins: QuerySet, nx: int, ny: int, unet: UNetLite) -> np.ndarray:
    return unet(scatter_queries(q_ins, nx, ny))


def scene_queries_to_bev(q_scn: QuerySet, patch: int, upsample: list[Conv2d], nx: int, ny: int) -> np.ndarray:
    """Lay scene queries out on the patch lattice and upsample back to [C, X, Y]."""
    if 2 ** len(upsample) != patch:
        raise ShapeError(f"{len(upsample)} upsampling stages for patch {patch}")
    gx, gy = nx // patch, ny // patch
    lattice = q_scn.ref_points / patch - 0.5
    cells = np.rint(lattice).astype(np.int64)
    if (not np.allclose(lattice, cells, atol=1e-6) or np.any(cells < 0)
            or np.any(cells[:, 0] >= gx) or np.any(cells[:, 1] >= gy)):
        raise ValueError("scene query references are not on the patch lattice")
    grid = np.zeros((q_scn.features.shape[1], gx, gy), dtype=q_scn.features.dtype)
    grid[:, cells[:, 0], cells[:, 1]] = q_scn.features.T
    for conv in upsample:
        grid = conv(upsample_nearest(grid, 2, (1, 2)))
    return grid


@dataclass
class AuxHeads:
    seg_ins: Conv2d  # 1x1, C -> 1
    seg_scn: Conv2d
    height_ins: ConvStack  # C -> Z
    height_scn: ConvStack

    def __call__(self, c_ins, c_scn) -> dict:
        return {
            "seg_logits": np.concatenate([self.seg_ins(c_ins), self.seg_scn(c_scn)], axis=0),
            "height_ins": sigmoid(self.height_ins(c_ins)),
            "height_scn": sigmoid(self.height_scn(c_scn)),
        }


@dataclass
class InstanceLayerWeights:
    bank: HeightCandidateBank
    image_attn: DeformableAttnWeights
    norm_image: LayerNormParams
    scene_attn: DeformableAttnWeights
    norm_scene: LayerNormParams
    self_attn: AttentionBlock
    ffn: FeedForward
    unet: UNetLite


@dataclass
class SceneLayerWeights:
    cross_attn: AttentionBlock
    self_attn: AttentionBlock
    ffn: FeedForward
    upsample: list[Conv2d]


@dataclass
class DecoderStack:
    instance_layers: list[InstanceLayerWeights]
    scene_layers: list[SceneLayerWeights]
    aux: list[AuxHeads]
    pos_ins: PositionalMLP
    pos_scn: PositionalMLP
    patch: int
    mask_ratio: float = 0.3

    def __post_init__(self):
        n = len(self.instance_layers)
        if n < 1 or len(self.scene_layers) != n or len(self.aux) != n:
            raise ValueError("decoder needs L >= 1 matching instance, scene and aux layers")

    @property
    def num_layers(self) -> int:
        return len(self.instance_layers)


@dataclass
class DecoderOutput:
    c_ins: np.ndarray
    c_scn: np.ndarray
    q_ins: QuerySet
    q_scn: QuerySet
    aux: list[dict] = field(default_factory=list)


def scene_layer(w: SceneLayerWeights, q_scn: QuerySet, q_img: QuerySet, pos, mask_ratio, rng, nx, ny, patch):
    q_scn = scene_image_cross_attention(q_scn, q_img, mask_ratio, rng, w.cross_attn, pos)
    q_scn = scene_self_attention(q_scn, w.self_attn, pos)
    q_scn = q_scn.with_features(w.ffn(q_scn.features))
    return q_scn, scene_queries_to_bev(q_scn, patch, w.upsample, nx, ny)


def instance_layer(w: InstanceLayerWeights, q_ins: QuerySet, pos, c_scn, pyramid, rig, spec, rng, nx, ny):
    f = q_ins.features
    idx, hw = adaptive_height_sample_many(f + pos, w.bank)
    a = instance_image_cross_attention_many(f + pos, q_ins.ref_points, w.bank.heights[idx], hw,
                                            pyramid, rig, spec, w.image_attn, rng)
    f = w.norm_image(f + a)
    b = instance_scene_attention_many(f + pos, q_ins.ref_points, c_scn, w.scene_attn)
    f = w.norm_scene(f + b)
    q_ins = instance_self_attention(q_ins.with_features(f), w.self_attn, pos)
    q_ins = q_ins.with_features(w.ffn(q_ins.features))
    return q_ins, propagate_instance_to_bev(q_ins, nx, ny, w.unet)


def run_decoder(stack: DecoderStack, q_ins: QuerySet, q_scn: QuerySet, q_img: QuerySet,
                pyramid: FeaturePyramid, rig: CameraRig, spec: SceneVolumeSpec,
                c_ins0: np.ndarray, c_scn0: np.ndarray,
                rng: np.random.Generator | None = None) -> DecoderOutput:
    """Apply all decoder layers; ``rng`` enables training-mode jitter and key masking.

    The BEV maps are refined residually from ``c_ins0``/``c_scn0``.
    """
    nx, ny = c_scn0.shape[1:]
    pe_ins = positional_embedding_many(q_ins.ref_points, nx, ny, stack.pos_ins)
    pe_scn = positional_embedding_many(q_scn.ref_points, nx, ny, stack.pos_scn)
    mask_ratio = stack.mask_ratio if rng is not None else 0.0
    c_ins, c_scn = c_ins0, c_scn0
    aux = []
    for w_ins, w_scn, heads in zip(stack.instance_layers, stack.scene_layers, stack.aux):
        q_scn, scn_map = scene_layer(w_scn, q_scn, q_img, pe_scn, mask_ratio, rng, nx, ny, stack.patch)
        c_scn = c_scn + scn_map
        q_ins, ins_map = instance_layer(w_ins, q_ins, pe_ins, c_scn, pyramid, rig, spec, rng, nx, ny)
        c_ins = c_ins + ins_map
        aux.append(heads(c_ins, c_scn))
    return DecoderOutput(c_ins, c_scn, q_ins, q_scn, aux)
