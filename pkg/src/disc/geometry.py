"""Scene volume, pinhole camera and frustum geometry.

Conventions: world frame is z-up; camera frame is x right, y down, z forward.
Pixel coordinates (u, v) put pixel centers on integers, u along the image
width. Geometry is computed in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

BEHIND_EPS = 1e-6


@dataclass(frozen=True)
class SceneVolumeSpec:
    origin: tuple[float, float, float]
    extent: tuple[float, float, float]
    voxel_size: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        for e, d in zip(self.extent, self.dims):
            if d <= 0:
                raise ConfigError(f"grid dims must be positive, got {self.dims}")
            if abs(d * self.voxel_size - e) > 1e-6 * max(1.0, e):
                raise ConfigError(
                    f"extent {self.extent} inconsistent with dims {self.dims} at voxel {self.voxel_size}"
                )

    @classmethod
    def full_scale(cls) -> "SceneVolumeSpec":
        return cls((0.0, -25.6, -2.0), (51.2, 51.2, 6.4), 0.2, (256, 256, 32))

    @classmethod
    def desk_scale(cls) -> "SceneVolumeSpec":
        return cls((0.0, 0.0, 0.0), (6.4, 6.4, 1.6), 0.2, (32, 32, 8))

    @classmethod
    def preset(cls, name: str) -> "SceneVolumeSpec":
        try:
            return {"full": cls.full_scale, "desk": cls.desk_scale}[name]()
        except KeyError:
            raise ConfigError(f"unknown volume preset {name!r}") from None

    def refined(self, factor: int) -> "SceneVolumeSpec":
        """Same volume with ``factor`` times finer voxels."""
        return SceneVolumeSpec(
            self.origin, self.extent, self.voxel_size / factor, tuple(d * factor for d in self.dims)
        )

    def voxel_centers(self, idx: np.ndarray) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(idx, dtype=np.float64) + 0.5) * self.voxel_size

    def bev_to_world(self, xy: np.ndarray) -> np.ndarray:
        """BEV positions in cell units -> world (x, y)."""
        return np.asarray(self.origin[:2]) + np.asarray(xy, dtype=np.float64) * self.voxel_size


def world_to_voxel_many(spec: SceneVolumeSpec, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Voxel indices [N, 3] and an in-volume mask [N] for world points [N, 3]."""
    rel = (np.asarray(points, dtype=np.float64) - np.asarray(spec.origin)) / spec.voxel_size
    idx = np.floor(rel).astype(np.int64)
    valid = np.all((idx >= 0) & (idx < np.asarray(spec.dims)), axis=-1)
    return idx, valid


def world_to_voxel(spec: SceneVolumeSpec, p_world) -> tuple[int, int, int] | None:
    idx, valid = world_to_voxel_many(spec, np.asarray(p_world, dtype=np.float64)[None])
    if not valid[0]:
        return None
    return tuple(int(i) for i in idx[0])


@dataclass(frozen=True)
class CameraRig:
    intrinsics: np.ndarray  # [3, 3]
    world_to_camera: np.ndarray  # [4, 4]
    width: int
    height: int

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64)
        e = np.asarray(self.world_to_camera, dtype=np.float64)
        if k.shape != (3, 3) or e.shape != (4, 4):
            raise ConfigError("intrinsics must be 3x3 and extrinsics 4x4")
        if np.any(np.tril(k, -1) != 0) or k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ConfigError("intrinsics must be upper-triangular with positive focal lengths")
        r = e[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-5) or np.linalg.det(r) < 0:
            raise ConfigError("extrinsic rotation is not orthonormal")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("image size must be positive")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "world_to_camera", e)

    @classmethod
    def looking_along(cls, position, yaw: float, pitch: float, fx: float, fy: float,
                      cx: float, cy: float, width: int, height: int) -> "CameraRig":
        """Camera at ``position`` whose optical axis has the given yaw/pitch (radians)."""
        fwd = np.array([np.cos(yaw) * np.cos(pitch), np.sin(yaw) * np.cos(pitch), np.sin(pitch)])
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        ext = np.eye(4)
        ext[:3, :3] = rot
        ext[:3, 3] = -rot @ np.asarray(position, dtype=np.float64)
        k = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(k, ext, width, height)

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def project_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (uv [N, 2], depth [N], in_front [N]) for world points [N, 3]."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cam = p @ self.rotation.T + self.translation
        depth = cam[:, 2]
        in_front = depth > BEHIND_EPS
        safe = np.where(in_front, depth, 1.0)
        k = self.intrinsics
        u = (k[0, 0] * cam[:, 0] + k[0, 1] * cam[:, 1]) / safe + k[0, 2]
        v = k[1, 1] * cam[:, 1] / safe + k[1, 2]
        return np.stack([u, v], axis=-1), depth, in_front

    def unproject_many(self, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        depth = np.asarray(depth, dtype=np.float64).reshape(-1)
        if np.any(depth <= 0):
            raise ValueError("unprojection needs positive depth")
        k = self.intrinsics
        y = (uv[:, 1] - k[1, 2]) / k[1, 1]
        x = (uv[:, 0] - k[0, 2] - k[0, 1] * y) / k[0, 0]
        cam = np.stack([x * depth, y * depth, depth], axis=-1)
        return (cam - self.translation) @ self.rotation


def project_world_to_image(rig: CameraRig, p_world) -> tuple[float, float, float, bool]:
    """Pinhole projection; the last element is False when the point is behind the camera."""
    uv, depth, ok = rig.project_many(np.asarray(p_world, dtype=np.float64)[None])
    return float(uv[0, 0]), float(uv[0, 1]), float(depth[0]), bool(ok[0])


def unproject_image_to_world(rig: CameraRig, u: float, v: float, depth: float) -> np.ndarray:
    return rig.unproject_many(np.array([[u, v]]), np.array([depth]))[0]


@dataclass(frozen=True)
class DepthBinning:
    d_min: float
    d_max: float
    bins: int

    def __post_init__(self):
        if not (self.d_min > 0 and self.d_max > self.d_min and self.bins >= 2):
            raise ConfigError(f"bad depth binning {self}")

    @property
    def width(self) -> float:
        return (self.d_max - self.d_min) / self.bins

    def centers(self) -> np.ndarray:
        return self.d_min + (np.arange(self.bins) + 0.5) * self.width

    def bin_index(self, depth: np.ndarray) -> np.ndarray:
        """Bin containing each depth; out-of-range depths clamp to the end bins."""
        idx = np.floor((np.asarray(depth, dtype=np.float64) - self.d_min) / self.width)
        return np.clip(idx, 0, self.bins - 1).astype(np.int64)


def sample_pixels(width: int, height: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Representative pixel of each stride x stride cell, as (cols [w], rows [h])."""
    if stride <= 0:
        raise ConfigError("stride must be positive")
    cols = np.arange(width // stride) * stride + stride // 2
    rows = np.arange(height // stride) * stride + stride // 2
    return cols, rows


def pixel_to_level(uv: np.ndarray, stride: int) -> np.ndarray:
    """Image pixel coordinates -> coordinates on a feature level of the given stride."""
    return (np.asarray(uv, dtype=np.float64) - stride // 2) / stride


@dataclass
class Frustum:
    pixels: np.ndarray  # [N, 2] (u, v)
    cells: np.ndarray  # [N, 2] (col, row) on the strided grid
    bins: np.ndarray  # [N]
    world: np.ndarray  # [N, 3]
    grid_shape: tuple[int, int] = field(default=(0, 0))  # (rows, cols)

    def __len__(self) -> int:
        return len(self.bins)


def generate_frustum(rig: CameraRig, binning: DepthBinning, stride: int) -> Frustum:
    """One world point per (sampled pixel, depth bin), pixels row-major, bins innermost."""
    cols, rows = sample_pixels(rig.width, rig.height, stride)
    cc, rr, bb = np.meshgrid(np.arange(len(cols)), np.arange(len(rows)), np.arange(binning.bins))
    # meshgrid with default xy indexing gives [rows, cols, bins]
    cc, rr, bb = cc.ravel(), rr.ravel(), bb.ravel()
    pixels = np.stack([cols[cc], rows[rr]], axis=-1).astype(np.float64)
    world = rig.unproject_many(pixels, binning.centers()[bb])
    return Frustum(pixels, np.stack([cc, rr], axis=-1), bb, world, (len(rows), len(cols)))
