"""Loss stack with hand-written backward passes.

Every ``*_grad`` function returns ``(loss, dloss/dinput)``; the plain
functions return the loss only. Losses are evaluated in float64 and
returned as Python floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DepthBinning

IGNORE = 255
EPS = 1e-6
FREE = 0


@dataclass(frozen=True)
class LossWeights:
    ssc: float = 1.0
    aug: float = 1.0
    height: float = 5.0
    depth: float = 0.01

    def __post_init__(self):
        if min(self.ssc, self.aug, self.height, self.depth) < 0:
            raise ValueError("loss weights must be non-negative")


def _softmax0(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def _log_softmax0(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=0, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=0, keepdims=True))


def _softmax_backward(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return x * (g - (g * x).sum(axis=0, keepdims=True))


def _valid_columns(logits, gt):
    logits = np.asarray(logits, dtype=np.float64)
    gt = np.asarray(gt)
    k = logits.shape[0]
    if logits.shape[1:] != gt.shape:
        raise ValueError(f"logits {logits.shape} do not match labels {gt.shape}")
    valid = gt != IGNORE
    if not valid.any():
        raise ValueError("no valid (non-ignore) voxels")
    return logits.reshape(k, -1)[:, valid.ravel()], gt[valid].astype(np.int64), valid


def _scal_core(p: np.ndarray, y: np.ndarray, classes) -> tuple[float, np.ndarray]:
    """Precision/recall/specificity affinity loss over soft class scores p [Kc, N]."""
    grad = np.zeros_like(p)
    total = 0.0
    for c in classes:
        pc = p[c]
        m = (y == c).astype(np.float64)
        tp, sp, n_pos = (pc * m).sum(), pc.sum(), m.sum()
        neg = 1.0 - m
        tn, n_neg = ((1.0 - pc) * neg).sum(), neg.sum()
        if sp > 0:
            prec = tp / sp
            total -= np.log(max(prec, EPS))
            if prec >= EPS:
                grad[c] -= m / tp - 1.0 / sp
        if n_pos > 0:
            rec = tp / n_pos
            total -= np.log(max(rec, EPS))
            if rec >= EPS:
                grad[c] -= m / tp
        if n_neg > 0:
            spec = tn / n_neg
            total -= np.log(max(spec, EPS))
            if spec >= EPS:
                grad[c] += neg / tn
    n_cls = max(len(classes), 1)
    return total / n_cls, grad / n_cls


def scal_loss_grad(logits, gt, mode: str = "semantic") -> tuple[float, np.ndarray]:
    """Scene-class affinity loss; ``logits`` is [K, ...] and ``gt`` [...].

    Classes enter the mean when present in the ground truth or in the argmax
    prediction. Geometric mode collapses the classes to free (class 0) and
    occupied.
    """
    z, y, valid = _valid_columns(logits, gt)
    x = _softmax0(z)
    if mode == "semantic":
        p, yc = x, y
    elif mode == "geometric":
        p, yc = np.stack([x[FREE], 1.0 - x[FREE]]), (y != FREE).astype(np.int64)
    else:
        raise ValueError(f"unknown SCAL mode {mode!r}")
    classes = sorted(set(np.unique(yc).tolist()) | set(np.unique(p.argmax(axis=0)).tolist()))
    loss, gp = _scal_core(p, yc, classes)
    if mode == "semantic":
        gx = gp
    else:
        gx = np.zeros_like(x)
        gx[FREE] = gp[0] - gp[1]
    gz = _softmax_backward(x, gx)
    full = np.zeros((z.shape[0], valid.size))
    full[:, valid.ravel()] = gz
    return float(loss), full.reshape(np.shape(logits))


def scal_loss(logits, gt, mode: str = "semantic") -> float:
    return scal_loss_grad(logits, gt, mode)[0]


def class_weights_from_counts(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    freq = counts / max(counts.sum(), 1.0)
    return 1.0 / np.log(1.02 + freq)


def label_histogram(gt, num_classes: int) -> np.ndarray:
    gt = np.asarray(gt)
    return np.bincount(gt[gt != IGNORE].ravel(), minlength=num_classes)[:num_classes]


def weighted_ce_loss_grad(logits, gt, class_weights) -> tuple[float, np.ndarray]:
    """Mean over valid voxels of w_y * (-log softmax(logits)_y)."""
    w = np.asarray(class_weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("class weights must be positive")
    z, y, valid = _valid_columns(logits, gt)
    n = y.size
    cols = np.arange(n)
    logp = _log_softmax0(z)
    wy = w[y]
    loss = -(wy * logp[y, cols]).sum() / n
    g = np.exp(logp)
    g[y, cols] -= 1.0
    g *= wy / n
    full = np.zeros((z.shape[0], valid.size))
    full[:, valid.ravel()] = g
    return float(loss), full.reshape(np.shape(logits))


def weighted_ce_loss(logits, gt, class_weights) -> float:
    return weighted_ce_loss_grad(logits, gt, class_weights)[0]


def _binary_seg_grad(z: np.ndarray, q: np.ndarray) -> tuple[float, np.ndarray]:
    n = z.size
    p = 1.0 / (1.0 + np.exp(-z))
    bce = (np.logaddexp(0.0, z) - q * z).sum() / n
    inter, union = (p * q).sum(), p.sum() + q.sum() + EPS
    dice = 1.0 - 2.0 * inter / union
    g_p = -2.0 * (q * union - inter) / union**2
    return bce + dice, (p - q) / n + g_p * p * (1.0 - p)


def dice_term(z, q) -> float:
    p = 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64)))
    q = np.asarray(q, dtype=np.float64)
    return float(1.0 - 2.0 * (p * q).sum() / (p.sum() + q.sum() + EPS))


def seg_loss_grad(bev_logits, masks) -> tuple[float, np.ndarray]:
    """Binary CE + dice per stream, summed over streams (leading axis)."""
    z = np.asarray(bev_logits, dtype=np.float64)
    q = np.asarray(masks, dtype=np.float64)
    if z.shape != q.shape:
        raise ValueError(f"segmentation logits {z.shape} vs masks {q.shape}")
    if np.any((q != 0) & (q != 1)):
        raise ValueError("segmentation masks must be binary")
    total, grad = 0.0, np.zeros_like(z)
    for s in range(z.shape[0]):
        val, grad[s] = _binary_seg_grad(z[s], q[s])
        total += val
    return float(total), grad


def seg_loss(bev_logits, masks) -> float:
    return seg_loss_grad(bev_logits, masks)[0]


def height_focal_loss_grad(pred, gt, gamma: float = 2.0, alpha: float | None = 0.25) -> tuple[float, np.ndarray]:
    """Binary focal loss on probabilities; ``alpha=None`` sets alpha_t = 1."""
    p_raw = np.asarray(pred, dtype=np.float64)
    pos = np.asarray(gt).astype(bool)
    p = np.clip(p_raw, EPS, 1.0 - EPS)
    pt = np.where(pos, p, 1.0 - p)
    at = 1.0 if alpha is None else np.where(pos, alpha, 1.0 - alpha)
    n = p.size
    loss = (-at * (1.0 - pt) ** gamma * np.log(pt)).sum() / n
    d_pt = -at * (-gamma * (1.0 - pt) ** (gamma - 1.0) * np.log(pt) + (1.0 - pt) ** gamma / pt) / n
    grad = np.where(pos, d_pt, -d_pt)
    grad = np.where((p_raw >= EPS) & (p_raw <= 1.0 - EPS), grad, 0.0)
    return float(loss), grad


def height_focal_loss(pred, gt, gamma: float = 2.0, alpha: float | None = 0.25) -> float:
    return height_focal_loss_grad(pred, gt, gamma, alpha)[0]


def depth_loss_grad(depth_logits, depth_gt, binning: DepthBinning) -> tuple[float, np.ndarray]:
    """Cross entropy against the bin holding each valid (gt > 0) pixel's depth."""
    z = np.asarray(depth_logits, dtype=np.float64)
    d = np.asarray(depth_gt, dtype=np.float64)
    if z.shape != (binning.bins,) + d.shape:
        raise ValueError(f"depth logits {z.shape} vs depth map {d.shape}")
    valid = (d > 0).ravel()
    if not valid.any():
        raise ValueError("no valid depth pixels")
    zz = z.reshape(binning.bins, -1)[:, valid]
    target = binning.bin_index(d.ravel()[valid])
    n = target.size
    cols = np.arange(n)
    logp = _log_softmax0(zz)
    loss = -logp[target, cols].sum() / n
    g = np.exp(logp)
    g[target, cols] -= 1.0
    full = np.zeros((binning.bins, valid.size))
    full[:, valid] = g / n
    return float(loss), full.reshape(z.shape)


def depth_loss(depth_logits, depth_gt, binning: DepthBinning) -> float:
    return depth_loss_grad(depth_logits, depth_gt, binning)[0]


@dataclass
class LossComponents:
    scal_geo: float
    scal_sem: float
    ce: float
    seg: list[float]  # one per decoder layer
    height: list[float]
    depth: float

    def __post_init__(self):
        if len(self.seg) != len(self.height) or not self.seg:
            raise ValueError("need seg and height losses for every decoder layer")


def layer_scales(n_layers: int) -> list[float]:
    """Auxiliary loss scale per decoder layer: halved except for the last."""
    return [0.5] * (n_layers - 1) + [1.0]


@dataclass
class LossReport:
    total: float
    entries: dict[str, float] = field(default_factory=dict)

    def recombine(self) -> float:
        e = self.entries
        n = int(e["aug.layers"])
        ssc = e["ssc.scal_geo"] + e["ssc.scal_sem"] + e["ssc.ce"]
        aug = sum(
            e[f"aug.layer{i}.scale"] * (e[f"aug.layer{i}.seg"] + e["weight.height"] * e[f"aug.layer{i}.height"])
            for i in range(n)
        )
        return e["weight.ssc"] * ssc + e["weight.aug"] * aug + e["weight.depth"] * e["depth"]

    def to_text(self) -> str:
        lines = [f"{k}={v!r}" for k, v in self.entries.items()]
        lines.append(f"total={self.total!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LossReport":
        entries = {}
        for line in text.splitlines():
            if line.strip():
                k, v = line.split("=", 1)
                entries[k.strip()] = float(v)
        total = entries.pop("total")
        return cls(total, entries)


def total_loss(parts: LossComponents, weights: LossWeights = LossWeights()) -> LossReport:
    scales = layer_scales(len(parts.seg))
    ssc = parts.scal_geo + parts.scal_sem + parts.ce
    aug = sum(s * (seg + weights.height * h) for s, seg, h in zip(scales, parts.seg, parts.height))
    total = weights.ssc * ssc + weights.aug * aug + weights.depth * parts.depth
    entries = {
        "ssc.scal_geo": parts.scal_geo,
        "ssc.scal_sem": parts.scal_sem,
        "ssc.ce": parts.ce,
        "ssc": ssc,
        "aug.layers": float(len(scales)),
    }
    for i, (s, seg, h) in enumerate(zip(scales, parts.seg, parts.height)):
        entries[f"aug.layer{i}.scale"] = s
        entries[f"aug.layer{i}.seg"] = seg
        entries[f"aug.layer{i}.height"] = h
    entries.update({
        "aug": aug,
        "depth": parts.depth,
        "weight.ssc": weights.ssc,
        "weight.aug": weights.aug,
        "weight.height": weights.height,
        "weight.depth": weights.depth,
    })
    return LossReport(float(total), {k: float(v) for k, v in entries.items()})
