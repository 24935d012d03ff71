"""Binary formats: TENS1 tensors and SSCV1 label grids.

TENS1: ``b"TENS1"``, u8 rank, rank x u32 LE extents, row-major f32 LE payload.
SSCV1: ``b"SSCV1"``, u32 LE X, Y, Z, u8 class count K, X*Y*Z u8 labels row-major.
Labels are class ids below K or the ignore value 255.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

TENS_MAGIC = b"TENS1"
SSCV_MAGIC = b"SSCV1"
IGNORE = 255


def _check_labels(labels: np.ndarray, num_classes: int) -> None:
    bad = (labels >= num_classes) & (labels != IGNORE)
    if bad.any():
        raise ValueError(f"label {int(labels[bad][0])} outside [0, {num_classes}) and not ignore")


def encode_tensor(x: np.ndarray) -> bytes:
    x = np.ascontiguousarray(x, dtype="<f4")
    if x.ndim > 255:
        raise ValueError("rank exceeds 255")
    head = TENS_MAGIC + struct.pack("<B", x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    return head + x.tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if buf[:5] != TENS_MAGIC:
        raise ValueError("not a TENS1 buffer")
    (rank,) = struct.unpack_from("<B", buf, 5)
    shape = struct.unpack_from(f"<{rank}I", buf, 6)
    off = 6 + 4 * rank
    n = int(np.prod(shape, dtype=np.int64))
    if len(buf) - off != 4 * n:
        raise ValueError(f"TENS1 payload is {len(buf) - off} bytes, expected {4 * n}")
    return np.frombuffer(buf, dtype="<f4", offset=off).reshape(shape).astype(np.float32)


def save_tensor(path, x: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(x))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def encode_labels(labels: np.ndarray, num_classes: int) -> bytes:
    if labels.ndim != 3:
        raise ValueError(f"label grid must be 3-D, got {labels.shape}")
    if not 0 < num_classes < 255:
        raise ValueError(f"class count {num_classes} does not fit the format")
    labels = np.asarray(labels)
    _check_labels(labels, num_classes)
    head = SSCV_MAGIC + struct.pack("<3IB", *labels.shape, num_classes)
    return head + np.ascontiguousarray(labels, dtype=np.uint8).tobytes()


def decode_labels(buf: bytes) -> tuple[np.ndarray, int]:
    if buf[:5] != SSCV_MAGIC:
        raise ValueError("not an SSCV1 buffer")
    x, y, z, k = struct.unpack_from("<3IB", buf, 5)
    off = 5 + 13
    if len(buf) - off != x * y * z:
        raise ValueError("SSCV1 payload size mismatch")
    labels = np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(x, y, z).copy()
    _check_labels(labels, k)
    return labels, k


def save_labels(path, labels: np.ndarray, num_classes: int) -> None:
    Path(path).write_bytes(encode_labels(labels, num_classes))


def load_labels(path) -> tuple[np.ndarray, int]:
    return decode_labels(Path(path).read_bytes())
