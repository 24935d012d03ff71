"""Procedural scenes standing in for real driving data.

A scene is a labelled voxel grid (ground with raised sidewalks, a back wall,
a handful of boxes and cylinders), a camera inside the volume, the ray-cast
depth map of that camera and a flat-shaded RGB rendering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraRig, SceneVolumeSpec, world_to_voxel_many
from .metrics import CategoryPartition

MARCH_STEP = 0.05
SKY = np.array([0.55, 0.7, 0.9])


@dataclass(frozen=True)
class SceneOptions:
    width: int = 64
    height: int = 48
    fx: float = 40.0
    fy: float = 40.0
    camera_height: float = 1.0  # above the volume floor
    min_objects: int = 2
    max_objects: int = 6
    ground_voxels: int = 2  # ground thickness in output-resolution voxels
    sidewalks: bool = True
    wall: bool = True


@dataclass
class SyntheticScene:
    gt: np.ndarray  # [2X, 2Y, 2Z] uint8 labels
    gt_spec: SceneVolumeSpec
    rig: CameraRig
    depth: np.ndarray  # [H, W] camera-frame z of the first hit, 0 where nothing is hit
    image: np.ndarray  # [3, H, W]
    seed: int
    num_classes: int


def class_colors(num_classes: int) -> np.ndarray:
    """Fixed, well-separated RGB per class id."""
    hues = (np.arange(num_classes) * 0.61803398875) % 1.0
    return np.stack([
        0.5 + 0.5 * np.cos(2 * np.pi * (hues + s)) for s in (0.0, 1 / 3, 2 / 3)
    ], axis=-1)


def _ground_heights(nx, ny, opts: SceneOptions, sidewalk_width: int) -> np.ndarray:
    h = np.full((nx, ny), opts.ground_voxels, np.int64)
    if opts.sidewalks:
        h[:, :sidewalk_width] += 1
        h[:, ny - sidewalk_width:] += 1
    return h


def build_labels(rng: np.random.Generator, gspec: SceneVolumeSpec, partition: CategoryPartition,
                 opts: SceneOptions) -> np.ndarray:
    nx, ny, nz = gspec.dims
    vs = gspec.voxel_size
    labels = np.zeros((nx, ny, nz), np.uint8)
    scene_ids = sorted(partition.scene)
    inst_ids = sorted(partition.instance) or scene_ids
    sw = max(1, ny // 8)
    ground = _ground_heights(nx, ny, opts, sw)
    kk = np.arange(nz)[None, None, :]
    below = kk < ground[..., None]
    labels[below] = scene_ids[0]
    if opts.sidewalks and len(scene_ids) > 1:
        side = np.zeros((nx, ny), bool)
        side[:, :sw] = side[:, ny - sw:] = True
        labels[below & side[..., None]] = scene_ids[1]
    if opts.wall and len(scene_ids) > 2:
        labels[nx - max(1, nx // 16):, :, :] = scene_ids[2]

    centers = gspec.voxel_centers(np.indices((nx, ny, nz)).reshape(3, -1).T).reshape(nx, ny, nz, 3)
    ext = np.asarray(gspec.extent)
    org = np.asarray(gspec.origin)
    n_obj = int(rng.integers(opts.min_objects, opts.max_objects + 1)) if opts.max_objects > 0 else 0
    start = int(rng.integers(len(inst_ids)))
    for n in range(n_obj):
        pos = (start + n) % len(inst_ids)
        cls = inst_ids[pos]
        cx = org[0] + rng.uniform(0.2, 0.85) * ext[0]
        cy = org[1] + rng.uniform(0.15, 0.85) * ext[1]
        i, j = int((cx - org[0]) / vs), int((cy - org[1]) / vs)
        base = org[2] + ground[min(i, nx - 1), min(j, ny - 1)] * vs
        rel = centers - np.array([cx, cy, base])
        if pos % 2 == 0:
            half = np.array([rng.uniform(0.4, 0.8), rng.uniform(0.3, 0.5)])
            top = rng.uniform(0.5, 0.8)
            mask = (np.abs(rel[..., 0]) <= half[0]) & (np.abs(rel[..., 1]) <= half[1])
        else:
            radius = rng.uniform(0.08, 0.15)
            top = rng.uniform(1.0, 1.3)
            mask = np.hypot(rel[..., 0], rel[..., 1]) <= radius
        mask &= (rel[..., 2] >= 0) & (rel[..., 2] <= top)
        labels[mask] = cls
    return labels


def ray_cast(labels: np.ndarray, gspec: SceneVolumeSpec, rig: CameraRig,
             step: float = MARCH_STEP) -> tuple[np.ndarray, np.ndarray]:
    """March every pixel ray at ``step`` metres; returns (z-depth [H, W], hit label [H, W]).

    Pixels whose ray leaves the volume without hitting anything get depth 0
    and label 0.
    """
    h, w = rig.height, rig.width
    vv, uu = np.mgrid[0:h, 0:w]
    pix = np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(np.float64)
    origin = rig.center
    dirs = rig.unproject_many(pix, np.ones(len(pix))) - origin  # camera-frame z of dirs is 1
    dt = step / np.linalg.norm(dirs, axis=-1)
    max_range = float(np.linalg.norm(gspec.extent)) + step
    n_steps = int(np.ceil(max_range / step)) + 1
    depth = np.zeros(len(pix))
    label = np.zeros(len(pix), np.uint8)
    alive = np.ones(len(pix), bool)
    for s in range(1, n_steps):
        if not alive.any():
            break
        t = s * dt[alive]
        pts = origin + dirs[alive] * t[:, None]
        idx, inside = world_to_voxel_many(gspec, pts)
        lab = np.zeros(len(t), np.uint8)
        lab[inside] = labels[tuple(idx[inside].T)]
        hit = lab != 0
        rows = np.flatnonzero(alive)
        depth[rows[hit]] = t[hit]
        label[rows[hit]] = lab[hit]
        # the camera sits inside the box, so a ray that leaves it never returns
        alive[rows[hit | ~inside]] = False
    return depth.reshape(h, w), label.reshape(h, w)


def render_image(depth: np.ndarray, hit_label: np.ndarray, num_classes: int) -> np.ndarray:
    colors = class_colors(num_classes)
    shade = 1.0 / (1.0 + 0.15 * depth)
    rgb = colors[hit_label] * shade[..., None]
    rgb[depth == 0] = SKY
    return rgb.transpose(2, 0, 1).astype(np.float32)


def place_camera(rng: np.random.Generator, spec: SceneVolumeSpec, opts: SceneOptions) -> CameraRig:
    org, ext = np.asarray(spec.origin), np.asarray(spec.extent)
    pos = org + np.array([
        0.02 * ext[0],
        0.5 * ext[1] + rng.uniform(-0.05, 0.05) * ext[1],
        opts.camera_height + rng.uniform(-0.1, 0.1),
    ])
    pos[2] = min(pos[2], org[2] + ext[2] - 0.05)
    yaw = rng.uniform(-0.15, 0.15)
    pitch = rng.uniform(-0.2, -0.05)
    return CameraRig.looking_along(pos, yaw, pitch, opts.fx, opts.fy,
                                   (opts.width - 1) / 2, (opts.height - 1) / 2, opts.width, opts.height)


def generate_scene(seed: int, spec: SceneVolumeSpec, partition: CategoryPartition | None = None,
                   opts: SceneOptions = SceneOptions()) -> SyntheticScene:
    """Deterministic scene for ``seed``; labels live on the 2x refined grid of ``spec``."""
    partition = partition or CategoryPartition.desk()
    if partition.num_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    gspec = spec.refined(2)
    labels = build_labels(rng, gspec, partition, opts)
    rig = place_camera(rng, spec, opts)
    depth, hit = ray_cast(labels, gspec, rig)
    image = render_image(depth, hit, partition.num_classes)
    return SyntheticScene(labels, gspec, rig, depth.astype(np.float32), image, seed, partition.num_classes)
