"""The ten acceptance checks, shared by ``disc selftest`` and the test suite.

Each check returns a :class:`CriterionResult`; none of them raise on a
failed comparison, so a full run always reports every line.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import losses, oracles
from .bev import DeformableAttnWeights, FeaturePyramid, deformable_attention_many, lift_splat
from .config import PipelineConfig
from .decoder import (
    HeightCandidateBank,
    _level_refs,
    adaptive_height_sample_many,
    instance_image_cross_attention_many,
)
from .fusion import fuse
from .geometry import CameraRig, DepthBinning, SceneVolumeSpec, generate_frustum, world_to_voxel_many
from .metrics import CategoryPartition, ConfusionAccumulator, finalize
from .numerics import LinearLayer
from .pipeline import evaluate_seeds, scene_for
from .model import run_forward, weights_for
from .queries import select_instance_refs

# Published SemanticKITTI test-set row: IoU, InsM, ScnM, mIoU (percent).
PUBLISHED_ROW = {"iou": 45.32, "insm": 7.25, "scnm": 28.56, "miou": 17.35}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.2f} s)"


def _timed(number: int, name: str, budget: float | None, fn) -> CriterionResult:
    start = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failed criterion, reported like any other
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    if budget is not None and elapsed > budget:
        ok, detail = False, f"{detail}; over the {budget:g} s budget"
    return CriterionResult(number, name, ok, detail, elapsed)


def _rand_linear(rng, n_in, n_out, scale=1.0) -> LinearLayer:
    return LinearLayer(rng.normal(0, scale, (n_out, n_in)), rng.normal(0, scale, n_out))


# 1 ---------------------------------------------------------------------------

def _metric_identity(rng):
    part = CategoryPartition.semantic_kitti()
    k = part.num_classes
    worst = 0.0
    for _ in range(100):
        acc = ConfusionAccumulator(k, part.free, *(rng.integers(0, 50, k) for _ in range(3)),
                                   rng.integers(0, 500, 3))
        # leave some classes with an empty union
        acc.tp[rng.random(k) < 0.1] = 0
        m = finalize(acc, part)
        worst = max(worst, abs(19 * m.miou - (10 * m.insm + 9 * m.scnm)))
    derived = (10 * PUBLISHED_ROW["insm"] + 9 * PUBLISHED_ROW["scnm"]) / 19
    row_ok = abs(derived - PUBLISHED_ROW["miou"]) <= 0.015
    ok = worst <= 1e-9 and row_ok
    return ok, f"max |19 mIoU - (10 InsM + 9 ScnM)| = {worst:.2e}; published row {derived:.2f} vs {PUBLISHED_ROW['miou']}"


# 2 ---------------------------------------------------------------------------

def _instance_refs(rng):
    mismatches = invariance = cases = 0
    for i in range(500):
        k = (2, 4)[i % 2]
        shape = (k * int(rng.integers(1, 5)), k * int(rng.integers(1, 5)))
        if i % 3 == 0:
            probs = rng.integers(0, 4, shape) / 4.0  # plenty of ties
        else:
            probs = rng.random(shape)
        nb = (shape[0] // k) * (shape[1] // k)
        for n in sorted({min(1, nb), min(4, nb), nb}):
            cases += 1
            got = select_instance_refs(probs, k, n)
            want = np.array(oracles.select_instance_refs(probs, k, n)).reshape(-1, 2)
            mismatches += not np.array_equal(got, want)
            invariance += not np.array_equal(got, select_instance_refs(0.5 * probs, k, n))
    return mismatches == 0 and invariance == 0, (
        f"{cases} cases, {mismatches} oracle mismatches, {invariance} changed under p -> p/2")


# 3 ---------------------------------------------------------------------------

def random_contained_rig(rng, spec: SceneVolumeSpec, binning: DepthBinning, stride: int,
                         width: int = 32, height: int = 24) -> CameraRig:
    """A random camera whose whole sampled frustum lies inside ``spec``."""
    center = np.asarray(spec.origin) + 0.5 * np.asarray(spec.extent)
    while True:
        pos = center + rng.uniform(-0.5, 0.5, 3)
        f = rng.uniform(20, 40)
        rig = CameraRig.looking_along(pos, rng.uniform(-np.pi, np.pi), rng.uniform(-0.4, 0.4), f, f,
                                      (width - 1) / 2, (height - 1) / 2, width, height)
        _, valid = world_to_voxel_many(spec, generate_frustum(rig, binning, stride).world)
        if valid.all():
            return rig


def _lift_conservation(rng):
    spec = SceneVolumeSpec((0.0, 0.0, 0.0), (9.6, 9.6, 9.6), 0.2, (48, 48, 48))
    binning = DepthBinning(0.5, 4.0, 8)
    stride, worst = 4, 0.0
    for _ in range(50):
        rig = random_contained_rig(rng, spec, binning, stride)
        h, w = rig.height // stride, rig.width // stride
        feats = rng.normal(size=(3, h, w))
        grid = lift_splat(feats, rng.normal(size=(binning.bins, h, w)), rig, binning, spec, stride)
        want = feats.sum(axis=(1, 2))
        got = grid.features.sum(axis=(1, 2, 3))
        worst = max(worst, float(np.max(np.abs(got - want))))
    return worst <= 1e-4, f"50 rigs, max per-channel sum error {worst:.2e}"


# 4 ---------------------------------------------------------------------------

def _round_trip(rng):
    rig = CameraRig.looking_along((1.0, 2.0, 1.5), 0.3, -0.1, 50.0, 48.0, 31.5, 23.5, 64, 48)
    pts = []
    while len(pts) < 1000:
        cand = rng.uniform(-10, 10, (4000, 3)) + np.array([1.0, 2.0, 1.5])
        uv, depth, front = rig.project_many(cand)
        inside = front & (depth > 0.1) & (uv[:, 0] >= 0) & (uv[:, 0] <= 63) & (uv[:, 1] >= 0) & (uv[:, 1] <= 47)
        pts.extend(cand[inside])
    pts = np.array(pts[:1000])
    uv, depth, _ = rig.project_many(pts)
    back = rig.unproject_many(uv, depth)
    err = float(np.max(np.linalg.norm(back - pts, axis=1)))
    return err <= 1e-4, f"1000 points, max error {err:.2e} m"


# 5 ---------------------------------------------------------------------------

def random_da_case(rng):
    c = int(rng.integers(2, 7))
    n_lvl = int(rng.integers(1, 3))
    k = int(rng.integers(1, 5))
    levels = [rng.normal(size=(c, int(rng.integers(2, 7)), int(rng.integers(2, 7)))) for _ in range(n_lvl)]
    nets = DeformableAttnWeights(_rand_linear(rng, c, n_lvl * k * 2), _rand_linear(rng, c, n_lvl * k),
                                 _rand_linear(rng, c, c), k)
    query = rng.normal(size=c)
    refs = np.stack([rng.uniform(-1, [lv.shape[2], lv.shape[1]]) for lv in levels])
    return query, levels, refs, nets


def _da_oracle(rng):
    worst = 0.0
    for _ in range(200):
        q, levels, refs, nets = random_da_case(rng)
        pyr = FeaturePyramid(levels, [1] * len(levels))
        got = deformable_attention_many(q[None], pyr, refs[None], nets)[0]
        want = oracles.deformable_attention(
            q, levels, refs, nets.offset_net.weight, nets.offset_net.bias, nets.weight_net.weight,
            nets.weight_net.bias, nets.value_net.weight, nets.value_net.bias, nets.points)
        worst = max(worst, float(np.max(np.abs(got - want))))
    conv = 0.0
    for _ in range(50):
        c = int(rng.integers(2, 7))
        const = rng.normal(size=c)
        levels = [np.broadcast_to(const[:, None, None], (c, 16, 16)).copy() for _ in range(2)]
        nets = DeformableAttnWeights(_rand_linear(rng, c, 16, 0.1), _rand_linear(rng, c, 8),
                                     _rand_linear(rng, c, c), 4)
        q = rng.normal(size=(5, c))
        out = deformable_attention_many(q, FeaturePyramid(levels, [2, 1]), np.full((5, 2, 2), 7.5), nets)
        conv = max(conv, float(np.max(np.abs(out - nets.value_net(const)))))
    ok = worst <= 1e-5 and conv <= 1e-6
    return ok, f"200 cases, max oracle error {worst:.2e}; constant-map error {conv:.2e}"


# 6 ---------------------------------------------------------------------------

def _grad_cases(rng):
    k = 3
    logits = rng.normal(0, 2, (k, 5))
    gt = np.array([0, 1, 2, 1, 0])
    cw = losses.class_weights_from_counts([3, 5, 2])
    seg_z, seg_q = rng.normal(size=(2, 5)), np.array([[1, 0, 1, 1, 0], [0, 0, 1, 0, 1]], float)
    probs = rng.uniform(0.05, 0.95, 5)
    occ = np.array([1, 0, 0, 1, 1])
    binning = DepthBinning(1.0, 5.0, 4)
    d_logits, d_gt = rng.normal(size=(4, 1, 5)), np.array([[1.5, 2.2, 0.0, 4.9, 3.1]])
    return {
        "scal(geo)": (lambda z: losses.scal_loss_grad(z, gt, "geometric"), logits),
        "scal(sem)": (lambda z: losses.scal_loss_grad(z, gt, "semantic"), logits),
        "weighted CE": (lambda z: losses.weighted_ce_loss_grad(z, gt, cw), logits),
        "bce+dice": (lambda z: losses.seg_loss_grad(z, seg_q), seg_z),
        "focal": (lambda p: losses.height_focal_loss_grad(p, occ), probs),
        "depth": (lambda z: losses.depth_loss_grad(z, d_gt, binning), d_logits),
    }


def _loss_gradients(rng):
    errors = {}
    for name, (fn, x) in _grad_cases(rng).items():
        _, analytic = fn(x)
        numeric = oracles.numerical_gradient(lambda v: fn(v)[0], x, 1e-3)
        errors[name] = oracles.relative_error(analytic, numeric)
    k, d = 5, 6
    ce = losses.weighted_ce_loss(np.zeros((k, 7)), np.arange(7) % k, np.ones(k))
    dep = losses.depth_loss(np.zeros((d, 2, 3)), np.full((2, 3), 2.0), DepthBinning(1.0, 4.0, d))
    scal = losses.scal_loss(np.zeros((2, 4)), np.array([0, 1, 0, 1]), "geometric")
    anchors = [abs(ce - math.log(k)), abs(dep - math.log(d)), abs(scal - 3 * math.log(2))]
    ok = max(errors.values()) <= 1e-3 and max(anchors) <= 1e-5
    worst = max(errors, key=errors.get)
    return ok, f"worst relative error {errors[worst]:.2e} ({worst}); anchor error {max(anchors):.2e}"


# 7 ---------------------------------------------------------------------------

def _height_convexity(rng):
    c, m = 8, 6
    worst = 0.0
    for _ in range(10):
        bank = HeightCandidateBank(np.sort(rng.uniform(0, 2, m)) + np.arange(m) * 1e-3,
                                   _rand_linear(rng, c, m), int(rng.integers(1, m + 1)))
        _, w = adaptive_height_sample_many(rng.normal(size=(100, c)), bank)
        worst = max(worst, float(np.max(np.abs(w.sum(axis=1) - 1.0))))

    spec = SceneVolumeSpec.desk_scale()
    rig = CameraRig.looking_along((0.1, 3.2, 1.0), 0.0, -0.1, 40.0, 40.0, 31.5, 23.5, 64, 48)
    const = rng.normal(size=c)
    pyr = FeaturePyramid([np.broadcast_to(const[:, None, None], (c, 12, 16)).copy(),
                          np.broadcast_to(const[:, None, None], (c, 24, 32)).copy()], [4, 2])
    nets = DeformableAttnWeights(LinearLayer(np.zeros((16, c)), np.zeros(16)), _rand_linear(rng, c, 8),
                                 _rand_linear(rng, c, c), 4)
    bank = HeightCandidateBank(np.linspace(0.2, 1.4, 5), _rand_linear(rng, c, 5), 2)
    refs_bev = np.column_stack([rng.uniform(10, 30, 400), rng.uniform(4, 28, 400)])
    q = rng.normal(size=(400, c))
    idx, w = adaptive_height_sample_many(q, bank)
    heights = bank.heights[idx]
    pts = np.concatenate([spec.bev_to_world(refs_bev)[:, None].repeat(2, 1), heights[..., None]], -1)
    lvl, front = _level_refs(rig, pyr.strides, pts.reshape(-1, 3))
    inside = front & np.all(lvl >= 0, axis=(1, 2)) & np.all(lvl[:, 0] <= [15, 11], axis=1) \
        & np.all(lvl[:, 1] <= [31, 23], axis=1)
    keep = inside.reshape(-1, 2).all(axis=1)
    out = instance_image_cross_attention_many(q[keep], refs_bev[keep], heights[keep], w[keep],
                                              pyr, rig, spec, nets)
    const_err = float(np.max(np.abs(out - nets.value_net(const))))
    ok = worst <= 1e-6 and const_err <= 1e-6 and keep.sum() >= 20
    return ok, (f"max |sum w - 1| = {worst:.2e} over 1000 queries; "
                f"constant pyramid error {const_err:.2e} on {int(keep.sum())} queries")


# 8 ---------------------------------------------------------------------------

def _fuse_oracle(rng):
    mismatches = 0
    for _ in range(100):
        c, x, y, z = (int(v) for v in rng.integers(1, 5, 4))
        args = [rng.normal(size=(c, x, y)), rng.normal(size=(c, x, y)),
                rng.random((z, x, y)), rng.random((z, x, y))]
        mismatches += not np.array_equal(fuse(*args), oracles.fuse(*args))
    c_ins, c_scn = rng.normal(size=(2, 4, 3, 3))
    zero = np.zeros((5, 3, 3))
    nonzero = int(np.count_nonzero(fuse(c_ins, c_scn, zero, zero)))
    return mismatches == 0 and nonzero == 0, f"100 shapes, {mismatches} mismatches; zero heights leave {nonzero} nonzero"


# 9 ---------------------------------------------------------------------------

def _end_to_end(_rng):
    cfg = PipelineConfig()
    scene = scene_for(cfg, cfg.run.seed)
    weights = weights_for(cfg)
    start = time.perf_counter()
    res = run_forward(cfg, scene, weights)
    forward_s = time.perf_counter() - start
    k = cfg.partition.num_classes
    shape_ok = res.logits.shape == (k, 64, 64, 16)
    finite = all(np.isfinite(v).all() for v in res.intermediates.values())
    acc, _ = evaluate_seeds(cfg, [cfg.run.seed], weights, perfect=True)
    m = finalize(acc, cfg.partition)
    perfect = [m.iou, m.miou, m.insm, m.scnm] + list(m.class_iou.values())
    perfect_ok = all(v == 1.0 for v in perfect)
    train = run_forward(cfg.with_overrides(mode="train"), scene, weights)
    rep = train.loss
    recomb = abs(rep.recombine() - rep.total)
    ok = forward_s < 60 and shape_ok and finite and perfect_ok and math.isfinite(rep.total) and recomb <= 1e-6
    return ok, (f"forward {forward_s:.2f} s, logits {res.logits.shape}, finite={finite}, "
                f"perfect metrics min {min(perfect):.3f}, train loss {rep.total:.4f} "
                f"(recombination error {recomb:.1e})")


# 10 --------------------------------------------------------------------------

def _determinism(_rng):
    from .cli import main  # imported here because the CLI imports this module for selftest

    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        scene = tmp / "scene.sscv1"
        if main(["gen", "--seed", "3", "--out", str(scene)]) != 0:
            return False, "scene generation failed"
        for i in range(2):
            out, rep = tmp / f"pred{i}.sscv1", tmp / f"pred{i}.txt"
            code = main(["--mode", "train", "run", "--scene", str(scene), "--out", str(out), "--report", str(rep)])
            if code != 0:
                return False, f"run exited with {code}"
            outputs.append((out.read_bytes(), rep.read_bytes()))
    same_pred = outputs[0][0] == outputs[1][0]
    same_rep = outputs[0][1] == outputs[1][1]
    return same_pred and same_rep, f"predictions identical={same_pred}, reports identical={same_rep}"


CRITERIA = [
    (1, "metric identity", 1.0, _metric_identity),
    (2, "instance reference oracle", 5.0, _instance_refs),
    (3, "lift-splat conservation", 10.0, _lift_conservation),
    (4, "projection round trip", 1.0, _round_trip),
    (5, "deformable attention oracle", None, _da_oracle),
    (6, "loss gradients and anchors", 10.0, _loss_gradients),
    (7, "adaptive height convexity", None, _height_convexity),
    (8, "fusion oracle", None, _fuse_oracle),
    (9, "end-to-end sanity", None, _end_to_end),
    (10, "determinism", None, _determinism),
]


def run_criterion(number: int, seed: int = 0) -> CriterionResult:
    num, name, budget, fn = CRITERIA[number - 1]
    rng = np.random.default_rng([seed, num])
    return _timed(num, name, budget, lambda: fn(rng))


def run_all(seed: int = 0) -> list[CriterionResult]:
    return [run_criterion(n, seed) for n, *_ in CRITERIA]
