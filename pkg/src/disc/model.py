"""Network weights and the end-to-end forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .bev import (
    ConvStack,
    DeformableAttnWeights,
    FeaturePyramid,
    depth_guided_proposals,
    lift_splat,
    pool_to_bev,
    refine_proposals,
    split_bev,
)
from .config import PYRAMID_STRIDES, PipelineConfig
from .decoder import (
    AttentionBlock,
    AuxHeads,
    DecoderStack,
    FeedForward,
    HeightCandidateBank,
    InstanceLayerWeights,
    SceneLayerWeights,
    UNetLite,
    run_decoder,
)
from .errors import NumericalError
from .fusion import Aggregator, ResBlock3d, aggregate, fuse, predict
from .geometry import sample_pixels
from .numerics import (
    Conv2d,
    LinearLayer,
    check_finite,
    init_conv2d,
    init_conv3d,
    init_layer_norm,
    init_linear,
    relu,
    sigmoid,
)
from .queries import (
    PositionalMLP,
    QuerySet,
    init_instance_queries,
    init_scene_queries,
    patch_centers,
    patch_reduce,
    select_instance_refs,
)
from .scene import SyntheticScene


@dataclass
class Backbone:
    """Two stride-2 conv layers; the pyramid lists the coarsest level first."""

    conv1: Conv2d
    conv2: Conv2d

    def __call__(self, image) -> FeaturePyramid:
        s2 = relu(self.conv1(image))
        s4 = relu(self.conv2(s2))
        return FeaturePyramid([s4, s2], list(PYRAMID_STRIDES))


@dataclass
class ModelWeights:
    backbone: Backbone
    depth_head: Conv2d
    refine: DeformableAttnWeights
    split_ins: ConvStack
    split_scn: ConvStack
    instance_head: Conv2d
    scene_reducer: ConvStack
    image_reducer: ConvStack
    decoder: DecoderStack
    aggregator: Aggregator
    head: LinearLayer


def _da(rng, c, levels, points) -> DeformableAttnWeights:
    return DeformableAttnWeights(
        init_linear(rng, c, levels * points * 2), init_linear(rng, c, levels * points),
        init_linear(rng, c, c), points,
    )


def _attn_block(rng, c) -> AttentionBlock:
    return AttentionBlock(*(init_linear(rng, c, c) for _ in range(4)), init_layer_norm(c))


def _ffn(rng, c) -> FeedForward:
    return FeedForward(init_linear(rng, c, 2 * c), init_linear(rng, 2 * c, c), init_layer_norm(c))


def _reducer(rng, c, patch) -> ConvStack:
    return ConvStack([init_conv2d(rng, c, c, 3, stride=2) for _ in range(int(np.log2(patch)))])


def init_weights(cfg: PipelineConfig, rng: np.random.Generator) -> ModelWeights:
    """Uniform +-1/sqrt(fan_in) initialization of every parameter from one generator."""
    c = cfg.model.channels
    nz = cfg.spec.dims[2]
    n_lvl = len(PYRAMID_STRIDES)
    dc, qc = cfg.decoder, cfg.queries
    extent_z = cfg.spec.extent[2]
    heights = np.linspace(0.0, extent_z, dc.heights)

    backbone = Backbone(init_conv2d(rng, 3, c, 3, stride=2), init_conv2d(rng, c, c, 3, stride=2))
    depth_head = init_conv2d(rng, c, cfg.depth.bins, 1)
    refine = _da(rng, c, n_lvl, dc.points)
    split_ins = ConvStack([init_conv2d(rng, c, c), init_conv2d(rng, c, c)])
    split_scn = ConvStack([init_conv2d(rng, c, c), init_conv2d(rng, c, c)])
    instance_head = init_conv2d(rng, c, 1, 1)
    scene_reducer = _reducer(rng, c, qc.patch)
    image_reducer = _reducer(rng, c, qc.patch)

    ins_layers, scn_layers, aux = [], [], []
    for _ in range(dc.layers):
        scn_layers.append(SceneLayerWeights(
            _attn_block(rng, c), _attn_block(rng, c), _ffn(rng, c),
            [init_conv2d(rng, c, c) for _ in range(int(np.log2(qc.patch)))],
        ))
        ins_layers.append(InstanceLayerWeights(
            HeightCandidateBank(heights, init_linear(rng, c, dc.heights), dc.n_sel),
            _da(rng, c, n_lvl, dc.points), init_layer_norm(c),
            _da(rng, c, 1, dc.points), init_layer_norm(c),
            _attn_block(rng, c), _ffn(rng, c),
            UNetLite(init_conv2d(rng, c, c), init_conv2d(rng, c, c, 3, stride=2),
                     init_conv2d(rng, c, c), init_conv2d(rng, c, c)),
        ))
        aux.append(AuxHeads(
            init_conv2d(rng, c, 1, 1), init_conv2d(rng, c, 1, 1),
            ConvStack([init_conv2d(rng, c, c), init_conv2d(rng, c, nz)]),
            ConvStack([init_conv2d(rng, c, c), init_conv2d(rng, c, nz)]),
        ))
    pos = [PositionalMLP(init_linear(rng, c, c), init_linear(rng, c, c), init_layer_norm(c)) for _ in range(2)]
    decoder = DecoderStack(ins_layers, scn_layers, aux, pos[0], pos[1], qc.patch, dc.mask_ratio)

    aggregator = Aggregator(
        [ResBlock3d(init_conv3d(rng, c, c), init_conv3d(rng, c, c)) for _ in range(2)],
        init_linear(rng, c, c), init_linear(rng, c, c), init_linear(rng, c, c), init_linear(rng, 2 * c, 1),
    )
    head = init_linear(rng, c, cfg.partition.num_classes)
    return ModelWeights(backbone, depth_head, refine, split_ins, split_scn, instance_head,
                        scene_reducer, image_reducer, decoder, aggregator, head)


def weights_for(cfg: PipelineConfig) -> ModelWeights:
    return init_weights(cfg, np.random.default_rng(cfg.run.seed))


@dataclass
class ForwardResult:
    pred: np.ndarray  # [2X, 2Y, 2Z] uint8
    logits: np.ndarray  # [K, 2X, 2Y, 2Z]
    intermediates: dict[str, np.ndarray] = field(default_factory=dict)
    loss: losses.LossReport | None = None


def stream_targets(gt: np.ndarray, partition, factor: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Working-resolution targets from output-resolution labels.

    Returns (segmentation masks [2, X, Y], height masks [2, Z, X, Y]) for the
    instance and scene streams; a working voxel is occupied by a stream when
    any of its sub-voxels carries one of that stream's classes.
    """
    nx, ny, nz = (d // factor for d in gt.shape)
    blocks = gt.reshape(nx, factor, ny, factor, nz, factor).transpose(0, 2, 4, 1, 3, 5).reshape(nx, ny, nz, -1)
    occ = []
    for ids in (partition.instance, partition.scene):
        occ.append(np.isin(blocks, sorted(ids)).any(axis=-1))
    occ = np.stack(occ).astype(np.float64)  # [2, X, Y, Z]
    return occ.max(axis=-1), occ.transpose(0, 3, 1, 2)


def depth_targets(depth: np.ndarray, width: int, height: int, stride: int) -> np.ndarray:
    cols, rows = sample_pixels(width, height, stride)
    return depth[np.ix_(rows, cols)]


def compute_losses(cfg: PipelineConfig, scene: SyntheticScene, logits, aux, depth_logits) -> losses.LossReport:
    partition = cfg.partition
    gt = scene.gt
    weights = losses.class_weights_from_counts(losses.label_histogram(gt, partition.num_classes))
    seg_masks, height_masks = stream_targets(gt, partition)
    seg = [losses.seg_loss(a["seg_logits"], seg_masks) for a in aux]
    height = [
        losses.height_focal_loss(a["height_ins"], height_masks[0])
        + losses.height_focal_loss(a["height_scn"], height_masks[1])
        for a in aux
    ]
    d_gt = depth_targets(scene.depth, cfg.camera.width, cfg.camera.height, cfg.depth.stride)
    parts = losses.LossComponents(
        scal_geo=losses.scal_loss(logits, gt, "geometric"),
        scal_sem=losses.scal_loss(logits, gt, "semantic"),
        ce=losses.weighted_ce_loss(logits, gt, weights),
        seg=seg,
        height=height,
        depth=losses.depth_loss(depth_logits, d_gt, cfg.binning),
    )
    return losses.total_loss(parts, cfg.loss_weights)


def run_forward(cfg: PipelineConfig, scene: SyntheticScene, weights: ModelWeights,
                rng: np.random.Generator | None = None) -> ForwardResult:
    """Full pass from image to labels; training mode also jitters, masks and scores losses."""
    spec, rig, w = cfg.spec, scene.rig, weights
    train = cfg.train
    if train and rng is None:
        rng = np.random.default_rng([cfg.run.seed, scene.seed])
    inter: dict[str, np.ndarray] = {}

    pyramid = w.backbone(scene.image)
    level = pyramid.levels[pyramid.strides.index(cfg.depth.stride)]
    depth_logits = w.depth_head(level)
    coarse = lift_splat(level, depth_logits, rig, cfg.binning, spec, cfg.depth.stride)
    proposals = depth_guided_proposals(scene.depth, rig, spec, cfg.depth.stride)
    fine = refine_proposals(coarse, proposals, pyramid, rig, w.refine)
    bev = pool_to_bev(fine)
    c_ins0, c_scn0 = split_bev(bev, w.split_ins, w.split_scn)
    inter.update({
        "image_s4": pyramid.levels[0], "image_s2": pyramid.levels[1], "depth_logits": depth_logits,
        "v_coarse": coarse.features, "v_fine": fine.features, "bev": bev,
        "c_ins0": c_ins0, "c_scn0": c_scn0,
    })

    probs = sigmoid(w.instance_head(c_ins0))[0]
    refs = select_instance_refs(probs, cfg.queries.block, cfg.queries.n_ins)
    q_ins = init_instance_queries(c_ins0, refs)
    q_scn = init_scene_queries(c_scn0, cfg.queries.patch, w.scene_reducer)
    small = pyramid.smallest
    q_img = QuerySet(patch_reduce(small, cfg.queries.patch, w.image_reducer),
                     patch_centers(small.shape[1], small.shape[2], cfg.queries.patch), "image")
    inter.update({"instance_probs": probs, "q_ins0": q_ins.features, "q_scn0": q_scn.features,
                  "q_img": q_img.features})

    dec = run_decoder(w.decoder, q_ins, q_scn, q_img, pyramid, rig, spec, c_ins0, c_scn0,
                      rng if train else None)
    h_ins, h_scn = dec.aux[-1]["height_ins"], dec.aux[-1]["height_scn"]
    volume = fuse(dec.c_ins, dec.c_scn, h_ins, h_scn)
    agg = aggregate(volume, w.aggregator)
    logits = predict(agg, w.head)
    pred = np.argmax(logits, axis=0).astype(np.uint8)
    inter.update({
        "q_ins": dec.q_ins.features, "q_scn": dec.q_scn.features, "c_ins": dec.c_ins, "c_scn": dec.c_scn,
        "h_ins": h_ins, "h_scn": h_scn, "volume": volume, "aggregated": agg, "logits": logits,
    })
    for i, a in enumerate(dec.aux):
        for k, v in a.items():
            inter[f"aux{i}_{k}"] = v
    for name, arr in inter.items():
        check_finite(name, arr)

    report = compute_losses(cfg, scene, logits, dec.aux, depth_logits) if train else None
    if report is not None and not np.isfinite(report.total):
        raise NumericalError("non-finite total loss")
    return ForwardResult(pred, logits, inter, report)
