"""Independent scalar-loop reference implementations.

These deliberately avoid the vectorized code paths they check: plain Python
loops over indices, ``math`` functions and explicit formulas. They are slow
and only meant for small inputs.
"""

from __future__ import annotations

import math

import numpy as np


def softmax(values) -> list[float]:
    m = max(values)
    e = [math.exp(v - m) for v in values]
    s = sum(e)
    return [x / s for x in e]


def bilinear(fm: np.ndarray, u: float, v: float) -> np.ndarray:
    """Textbook bilinear interpolation on [C, H, W]; zero outside [0, W-1] x [0, H-1]."""
    c, h, w = fm.shape
    if u < 0 or v < 0 or u > w - 1 or v > h - 1:
        return np.zeros(c)
    out = np.zeros(c)
    x0, y0 = int(math.floor(u)), int(math.floor(v))
    for dy in (0, 1):
        for dx in (0, 1):
            xi, yi = x0 + dx, y0 + dy
            wx = (u - x0) if dx else (1 - (u - x0))
            wy = (v - y0) if dy else (1 - (v - y0))
            if wx * wy == 0 or xi > w - 1 or yi > h - 1:
                continue
            for ch in range(c):
                out[ch] += wx * wy * float(fm[ch, yi, xi])
    return out


def max_pool(x: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(x, axis, 0)
    out = np.empty(moved.shape[1:], dtype=np.float64)
    for idx in np.ndindex(*moved.shape[1:]):
        best = -math.inf
        for a in range(moved.shape[0]):
            best = max(best, float(moved[(a,) + idx]))
        out[idx] = best
    return out


def attention(q, k, v, mask=None) -> np.ndarray:
    nq, c = q.shape
    nk = k.shape[0]
    keep = [True] * nk if mask is None else [bool(m) for m in mask]
    out = np.zeros((nq, v.shape[1]))
    for i in range(nq):
        scores = []
        for j in range(nk):
            if keep[j]:
                scores.append(sum(float(q[i, t]) * float(k[j, t]) for t in range(c)) / math.sqrt(c))
        probs = iter(softmax(scores))
        for j in range(nk):
            if keep[j]:
                pj = next(probs)
                out[i] += pj * v[j].astype(np.float64)
    return out


def linear(weight, bias, x) -> np.ndarray:
    out = np.zeros(weight.shape[0])
    for o in range(weight.shape[0]):
        out[o] = float(bias[o]) + sum(float(weight[o, i]) * float(x[i]) for i in range(weight.shape[1]))
    return out


def conv2d(x, weight, bias, stride: int = 1, padding: int | None = None) -> np.ndarray:
    cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    p = kh // 2 if padding is None else padding
    ho = (h + 2 * p - kh) // stride + 1
    wo = (w + 2 * p - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = float(bias[o])
                for c in range(cin):
                    for a in range(kh):
                        for b in range(kw):
                            r, s = i * stride + a - p, j * stride + b - p
                            if 0 <= r < h and 0 <= s < w:
                                acc += float(weight[o, c, a, b]) * float(x[c, r, s])
                out[o, i, j] = acc
    return out


def conv3d(x, weight, bias) -> np.ndarray:
    cin, nx, ny, nz = x.shape
    cout, _, k, _, _ = weight.shape
    p = k // 2
    out = np.zeros((cout, nx, ny, nz))
    for o in range(cout):
        for i, j, l in np.ndindex(nx, ny, nz):
            acc = float(bias[o])
            for c in range(cin):
                for a, b, d in np.ndindex(k, k, k):
                    r, s, t = i + a - p, j + b - p, l + d - p
                    if 0 <= r < nx and 0 <= s < ny and 0 <= t < nz:
                        acc += float(weight[o, c, a, b, d]) * float(x[c, r, s, t])
            out[o, i, j, l] = acc
    return out


def select_instance_refs(probs: np.ndarray, k: int, n: int) -> list[tuple[float, float]]:
    """Enumerate every block, scan every cell, then fully sort the winners."""
    x, y = probs.shape
    winners = []
    for bi in range(x // k):
        for bj in range(y // k):
            best = None
            for i in range(bi * k, bi * k + k):
                for j in range(bj * k, bj * k + k):
                    p = float(probs[i, j])
                    flat = i * y + j
                    if best is None or p > best[0] or (p == best[0] and flat < best[1]):
                        best = (p, flat, i, j)
            winners.append(best)
    winners.sort(key=lambda t: (-t[0], t[1]))
    return [(i + 0.5, j + 0.5) for _, _, i, j in winners[:n]]


def deformable_attention(query, levels, refs, offset_w, offset_b, weight_w, weight_b,
                         value_w, value_b, points: int) -> np.ndarray:
    """sum_k A_k W phi(level, ref + offset_k); samples off the level contribute nothing."""
    n_lvl = len(levels)
    offs = linear(offset_w, offset_b, query)
    logits = linear(weight_w, weight_b, query)
    attn = softmax(list(logits))
    out = np.zeros(value_w.shape[0])
    for l in range(n_lvl):
        fm = levels[l]
        _, h, w = fm.shape
        for kk in range(points):
            base = (l * points + kk) * 2
            u = refs[l][0] + offs[base]
            v = refs[l][1] + offs[base + 1]
            if u < 0 or v < 0 or u > w - 1 or v > h - 1:
                continue
            phi = bilinear(fm, u, v)
            out += attn[l * points + kk] * linear(value_w, value_b, phi)
    return out


def fuse(c_ins, c_scn, h_ins, h_scn) -> np.ndarray:
    c, nx, ny = c_ins.shape
    nz = h_ins.shape[0]
    out = np.zeros((c, nx, ny, nz))
    for ch, i, j, l in np.ndindex(c, nx, ny, nz):
        out[ch, i, j, l] = (float(c_ins[ch, i, j]) * float(h_ins[l, i, j])
                            + float(c_scn[ch, i, j]) * float(h_scn[l, i, j]))
    return out


def numerical_gradient(f, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + step
        hi = f(x)
        x[idx] = orig - step
        lo = f(x)
        x[idx] = orig
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return num / den
