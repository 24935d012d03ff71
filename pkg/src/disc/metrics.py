"""Occupancy IoU, semantic mIoU and the instance/scene group means."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IGNORE = 255

SEMANTIC_KITTI_CLASSES = (
    "empty", "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person", "bicyclist",
    "motorcyclist", "road", "parking", "sidewalk", "other-ground", "building", "fence",
    "vegetation", "trunk", "terrain", "pole", "traffic-sign",
)
SEMANTIC_KITTI_INSTANCE = (
    "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person", "bicyclist",
    "motorcyclist", "pole", "traffic-sign",
)
KITTI360_CLASSES = (
    "empty", "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person", "road",
    "parking", "sidewalk", "other-ground", "building", "fence", "vegetation", "terrain",
    "pole", "traffic-sign", "other-structure", "other-object",
)
KITTI360_INSTANCE = (
    "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person", "pole",
    "traffic-sign", "other-object",
)
DESK_CLASSES = ("empty", "road", "sidewalk", "building", "car", "pole")
DESK_INSTANCE = ("car", "pole")


@dataclass(frozen=True)
class CategoryPartition:
    names: tuple[str, ...]
    instance: frozenset[int]
    scene: frozenset[int]
    free: int = 0

    def __post_init__(self):
        others = set(range(len(self.names))) - {self.free}
        if self.instance & self.scene:
            raise ValueError("instance and scene groups overlap")
        if self.instance | self.scene != others:
            raise ValueError("instance and scene groups must cover every non-free class")

    @classmethod
    def from_names(cls, names, instance_names, free: int = 0) -> "CategoryPartition":
        names = tuple(names)
        ins = frozenset(names.index(n) for n in instance_names)
        scn = frozenset(range(len(names))) - ins - {free}
        return cls(names, ins, scn, free)

    @classmethod
    def semantic_kitti(cls) -> "CategoryPartition":
        return cls.from_names(SEMANTIC_KITTI_CLASSES, SEMANTIC_KITTI_INSTANCE)

    @classmethod
    def kitti360(cls) -> "CategoryPartition":
        return cls.from_names(KITTI360_CLASSES, KITTI360_INSTANCE)

    @classmethod
    def desk(cls) -> "CategoryPartition":
        return cls.from_names(DESK_CLASSES, DESK_INSTANCE)

    @classmethod
    def preset(cls, name: str) -> "CategoryPartition":
        presets = {"semantic_kitti": cls.semantic_kitti, "kitti360": cls.kitti360, "desk": cls.desk}
        if name not in presets:
            raise ValueError(f"unknown partition {name!r}")
        return presets[name]()

    @property
    def num_classes(self) -> int:
        return len(self.names)


@dataclass
class ConfusionAccumulator:
    num_classes: int
    free: int = 0
    tp: np.ndarray = field(default=None)
    fp: np.ndarray = field(default=None)
    fn: np.ndarray = field(default=None)
    occ: np.ndarray = field(default=None)  # occupancy (tp, fp, fn)

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.num_classes, np.int64))
        if self.occ is None:
            self.occ = np.zeros(3, np.int64)

    def copy(self) -> "ConfusionAccumulator":
        return ConfusionAccumulator(self.num_classes, self.free, self.tp.copy(), self.fp.copy(),
                                    self.fn.copy(), self.occ.copy())

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        if other.num_classes != self.num_classes or other.free != self.free:
            raise ValueError("cannot merge accumulators over different label sets")
        return ConfusionAccumulator(self.num_classes, self.free, self.tp + other.tp, self.fp + other.fp,
                                    self.fn + other.fn, self.occ + other.occ)

    __add__ = merge


def accumulate(pred, gt, acc: ConfusionAccumulator) -> ConfusionAccumulator:
    """Return ``acc`` plus the confusion counts of one prediction/ground-truth pair."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = gt != IGNORE
    p = pred[valid].astype(np.int64)
    g = gt[valid].astype(np.int64)
    k = acc.num_classes
    hit = p == g
    tp = np.bincount(g[hit], minlength=k)[:k]
    fp = np.bincount(p[~hit], minlength=k)[:k]
    fn = np.bincount(g[~hit], minlength=k)[:k]
    po, go = p != acc.free, g != acc.free
    occ = np.array([np.sum(po & go), np.sum(po & ~go), np.sum(~po & go)], np.int64)
    return acc.merge(ConfusionAccumulator(k, acc.free, tp, fp, fn, occ))


def _iou(tp, fp, fn):
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    den = tp + fp + fn
    return np.divide(tp, den, out=np.zeros_like(den), where=den > 0)


@dataclass
class MetricResult:
    iou: float
    miou: float
    insm: float
    scnm: float
    class_iou: dict[str, float]

    def to_text(self) -> str:
        """Plain-text table followed by a key=value block."""
        rows = [f"{'class':<16}{'IoU':>8}", "-" * 24]
        rows += [f"{name:<16}{100 * v:8.2f}" for name, v in self.class_iou.items()]
        rows += ["-" * 24]
        for label, v in (("IoU", self.iou), ("mIoU", self.miou), ("InsM", self.insm), ("ScnM", self.scnm)):
            rows.append(f"{label:<16}{100 * v:8.2f}")
        rows.append("")
        rows += [f"iou={self.iou!r}", f"miou={self.miou!r}", f"insm={self.insm!r}", f"scnm={self.scnm!r}"]
        rows += [f"class.{name}={v!r}" for name, v in self.class_iou.items()]
        return "\n".join(rows) + "\n"


def finalize(acc: ConfusionAccumulator, partition: CategoryPartition) -> MetricResult:
    """Per-class IoU; classes with an empty union count as zero in every mean."""
    if partition.num_classes != acc.num_classes:
        raise ValueError("partition and accumulator disagree on the class count")
    ious = _iou(acc.tp, acc.fp, acc.fn)
    sem = sorted(partition.instance | partition.scene)
    occ = float(_iou(*acc.occ))
    return MetricResult(
        iou=occ,
        miou=float(ious[sem].mean()),
        insm=float(ious[sorted(partition.instance)].mean()),
        scnm=float(ious[sorted(partition.scene)].mean()),
        class_iou={partition.names[c]: float(ious[c]) for c in sem},
    )
