"""Multi-scene evaluation and scene files."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import PipelineConfig
from .geometry import CameraRig, SceneVolumeSpec
from .losses import LossReport
from .metrics import ConfusionAccumulator, MetricResult, accumulate, finalize
from .model import ModelWeights, run_forward, weights_for
from .scene import SyntheticScene, generate_scene


def scene_for(cfg: PipelineConfig, seed: int) -> SyntheticScene:
    return generate_scene(seed, cfg.spec, cfg.partition, cfg.scene_options)


@dataclass
class EvalResult:
    accumulator: ConfusionAccumulator
    metrics: MetricResult
    losses: list[LossReport] = field(default_factory=list)

    def mean_loss(self) -> LossReport | None:
        if not self.losses:
            return None
        keys = self.losses[0].entries.keys()
        entries = {k: float(np.mean([r.entries[k] for r in self.losses])) for k in keys}
        return LossReport(float(np.mean([r.total for r in self.losses])), entries)

    def to_text(self) -> str:
        text = self.metrics.to_text()
        loss = self.mean_loss()
        if loss is not None:
            text += "\n" + "".join(f"loss.{line}\n" for line in loss.to_text().splitlines())
        return text


def evaluate_seeds(cfg: PipelineConfig, seeds, weights: ModelWeights | None = None,
                   perfect: bool = False) -> tuple[ConfusionAccumulator, list[LossReport]]:
    """Accumulate metrics over the scenes for ``seeds``.

    ``perfect`` replaces the network output with the ground truth.
    """
    weights = weights or weights_for(cfg)
    acc = ConfusionAccumulator(cfg.partition.num_classes, cfg.partition.free)
    reports = []
    for seed in seeds:
        scene = scene_for(cfg, seed)
        if perfect:
            pred = scene.gt
        else:
            res = run_forward(cfg, scene, weights)
            pred = res.pred
            if res.loss is not None:
                reports.append(res.loss)
        acc = accumulate(pred, scene.gt, acc)
    return acc, reports


def _chunk(args):
    cfg, seeds, perfect = args
    return evaluate_seeds(cfg, seeds, perfect=perfect)


def run_eval(cfg: PipelineConfig, n_scenes: int, perfect: bool = False, workers: int = 1) -> EvalResult:
    if n_scenes < 1:
        raise ValueError("need at least one scene")
    seeds = list(range(cfg.run.seed, cfg.run.seed + n_scenes))
    if workers <= 1:
        acc, reports = evaluate_seeds(cfg, seeds, perfect=perfect)
    else:
        chunks = [seeds[i::workers] for i in range(workers) if seeds[i::workers]]
        with ProcessPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(_chunk, [(cfg, c, perfect) for c in chunks]))
        acc = parts[0][0]
        for a, _ in parts[1:]:
            acc = acc.merge(a)
        # restore seed order so reports do not depend on the worker count
        by_seed = {}
        for c, (_, reps) in zip(chunks, parts):
            by_seed.update(zip(c, reps))
        reports = [by_seed[s] for s in seeds if s in by_seed]
    return EvalResult(acc, finalize(acc, cfg.partition), reports)


def _sidecars(path: Path) -> dict[str, Path]:
    return {
        "meta": path.with_name(path.name + ".meta"),
        "depth": path.with_name(path.name + ".depth.tens1"),
        "image": path.with_name(path.name + ".image.tens1"),
    }


def save_scene(path, scene: SyntheticScene) -> None:
    """SSCV1 labels at ``path`` plus rig metadata, depth and image sidecars."""
    path = Path(path)
    side = _sidecars(path)
    io.save_labels(path, scene.gt, scene.num_classes)
    io.save_tensor(side["depth"], scene.depth)
    io.save_tensor(side["image"], scene.image)
    rig = scene.rig
    meta = [
        f"seed = {scene.seed}",
        f"width = {rig.width}",
        f"height = {rig.height}",
        "intrinsics = " + " ".join(repr(float(v)) for v in rig.intrinsics.ravel()),
        "world_to_camera = " + " ".join(repr(float(v)) for v in rig.world_to_camera.ravel()),
        "gt_origin = " + " ".join(repr(float(v)) for v in scene.gt_spec.origin),
        "gt_extent = " + " ".join(repr(float(v)) for v in scene.gt_spec.extent),
        f"gt_voxel = {scene.gt_spec.voxel_size!r}",
    ]
    side["meta"].write_text("\n".join(meta) + "\n")


def load_scene(path) -> SyntheticScene:
    path = Path(path)
    side = _sidecars(path)
    gt, k = io.load_labels(path)
    meta = {}
    for line in side["meta"].read_text().splitlines():
        if line.strip():
            key, val = line.split("=", 1)
            meta[key.strip()] = val.split()
    rig = CameraRig(
        np.array(meta["intrinsics"], float).reshape(3, 3),
        np.array(meta["world_to_camera"], float).reshape(4, 4),
        int(meta["width"][0]), int(meta["height"][0]),
    )
    gspec = SceneVolumeSpec(
        tuple(float(v) for v in meta["gt_origin"]), tuple(float(v) for v in meta["gt_extent"]),
        float(meta["gt_voxel"][0]), gt.shape,
    )
    return SyntheticScene(gt, gspec, rig, io.load_tensor(side["depth"]), io.load_tensor(side["image"]),
                          int(meta["seed"][0]), k)
