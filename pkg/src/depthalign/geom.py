"""Pinhole camera model, rigid transforms, and z-buffered point projection.

Coordinate conventions used throughout the package:

  World / ego frame (right-handed):
    x forward, y left, z up.  The LiDAR scan-start frame coincides with
    the world frame (the ego vehicle starts a sweep at the origin).

  Camera frame (standard computer vision):
    x right (image u), y down (image v), z forward (depth).

  Image frame:
    u = column index, v = row index, origin at the top-left pixel center.
    A continuous position (u, v) rasterizes to pixel
    (floor(u + 0.5), floor(v + 0.5)), i.e. round-half-up.

Depth is carried as 64-bit float everywhere; file writers are the only
place values get quantized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Supervised depth range of the projection frustum, meters.
DEPTH_MIN = 1.0
DEPTH_MAX = 60.0

_ORTHO_TOL = 1e-9


class BehindCamera(Exception):
    """Point has non-positive depth in the camera frame."""


class OutOfFrame(Exception):
    """Projected pixel falls outside the image bounds."""


def rasterize(u, v):
    """Map continuous image coordinates to integer pixel indices (col, row)."""
    return int(np.floor(u + 0.5)), int(np.floor(v + 0.5))


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation, mapping points as R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant must be +1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) batch."""
        p = np.asarray(points, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equal to applying b first, then a."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def rotation_about_axis(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        raise ValueError("rotation axis must be nonzero")
    x, y, z = axis / n
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle_rad) * k + (1.0 - np.cos(angle_rad)) * (k @ k)


def rotation_angle_deg(rotation: np.ndarray) -> float:
    """Magnitude of a rotation matrix, degrees, from its trace."""
    c = (np.trace(rotation) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


@dataclass
class SparseDepthMap:
    """Per-pixel depth in meters; 0 means no measurement.

    `source_id` optionally records the identity of the surface each return
    came from (simulator bookkeeping, -1 where there is no return).
    """

    depth: np.ndarray
    source_id: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth must be a 2-d array")
        nz = d[d != 0]
        if nz.size and (nz.min() < DEPTH_MIN or nz.max() > DEPTH_MAX):
            raise ValueError(
                f"nonzero depths must lie in [{DEPTH_MIN}, {DEPTH_MAX}] m")
        if np.any(d < 0):
            raise ValueError("depth must be nonnegative")
        self.depth = d
        if self.source_id is not None:
            s = np.asarray(self.source_id, dtype=np.int32)
            if s.shape != d.shape:
                raise ValueError("source_id shape must match depth")
            self.source_id = s

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def copy(self) -> "SparseDepthMap":
        sid = None if self.source_id is None else self.source_id.copy()
        return SparseDepthMap(self.depth.copy(), sid)


def project_point(k: Intrinsics, t: RigidTransform, point) -> tuple[float, float, float]:
    """Project a world point; returns continuous (u, v, depth).

    Raises BehindCamera for non-positive camera depth and OutOfFrame when
    the rasterized pixel lies outside the image.  Never clamps.
    """
    q = t.apply(np.asarray(point, dtype=np.float64))
    if q[2] <= 0:
        raise BehindCamera(f"camera-frame depth {q[2]:.6g} <= 0")
    u = k.fx * q[0] / q[2] + k.cx
    v = k.fy * q[1] / q[2] + k.cy
    col, row = rasterize(u, v)
    if not (0 <= col < k.width and 0 <= row < k.height):
        raise OutOfFrame(f"pixel ({col}, {row}) outside {k.width}x{k.height}")
    return float(u), float(v), float(q[2])


def unproject_pixel(k: Intrinsics, u: float, v: float, depth: float) -> np.ndarray:
    """Camera-frame point whose projection is (u, v) at the given depth."""
    return np.array([(u - k.cx) / k.fx * depth,
                     (v - k.cy) / k.fy * depth,
                     depth])


def unproject_point(k: Intrinsics, t: RigidTransform, u, v, depth) -> np.ndarray:
    """World point recovered from pixel + depth through the inverse of t."""
    return t.inverse().apply(unproject_pixel(k, u, v, depth))


def render_sparse_depth(cloud, k: Intrinsics, t: RigidTransform,
                        d_min: float = DEPTH_MIN,
                        d_max: float = DEPTH_MAX) -> SparseDepthMap:
    """Rasterize a point cloud into a sparse depth map with a z-buffer.

    `cloud` is an (N, 3) array of world points or any object exposing
    `positions` (and optionally `source_ids`).  Points outside the frustum
    (behind the camera, outside the depth range, or off the image) are
    skipped.  Where several points land on one pixel the smallest depth
    wins; exact depth ties go to the lowest point index.
    """
    positions = getattr(cloud, "positions", cloud)
    source_ids = getattr(cloud, "source_ids", None)
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("point cloud is empty")

    q = t.apply(pts)
    z = q[:, 2]
    keep = (z >= d_min) & (z <= d_max)
    depth = np.zeros((k.height, k.width))
    sid = np.full((k.height, k.width), -1, dtype=np.int32)
    if np.any(keep):
        idx = np.nonzero(keep)[0]
        zk = z[idx]
        col = np.floor(k.fx * q[idx, 0] / zk + k.cx + 0.5).astype(np.int64)
        row = np.floor(k.fy * q[idx, 1] / zk + k.cy + 0.5).astype(np.int64)
        inside = (col >= 0) & (col < k.width) & (row >= 0) & (row < k.height)
        idx, zk, col, row = idx[inside], zk[inside], col[inside], row[inside]
        if idx.size:
            pix = row * k.width + col
            # Sort by (pixel, depth, original index); first hit per pixel wins.
            order = np.lexsort((idx, zk, pix))
            pix_sorted = pix[order]
            first = np.ones(pix_sorted.size, dtype=bool)
            first[1:] = pix_sorted[1:] != pix_sorted[:-1]
            win = order[first]
            depth.flat[pix[win]] = zk[win]
            if source_ids is not None:
                sid.flat[pix[win]] = np.asarray(source_ids)[idx[win]]
    return SparseDepthMap(depth, sid if source_ids is not None else None)


def perturb_extrinsics(t: RigidTransform, rot_noise_deg: float,
                       trans_noise_m: float, seed: int) -> RigidTransform:
    """Compose t with a random small rotation and translation.

    The rotation magnitude is uniform in [0, rot_noise_deg] about a
    uniformly random axis; the translation is uniform in a ball of radius
    trans_noise_m.  Deterministic for a fixed seed; zero noise returns t
    exactly.
    """
    if rot_noise_deg < 0 or trans_noise_m < 0:
        raise ValueError("noise magnitudes must be nonnegative")
    rng = np.random.default_rng([int(seed), 0x9E0A])
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-12:  # pragma: no cover - essentially never
        axis = rng.normal(size=3)
    angle = np.radians(rng.uniform(0.0, rot_noise_deg)) if rot_noise_deg > 0 else 0.0
    direction = rng.normal(size=3)
    while np.linalg.norm(direction) < 1e-12:  # pragma: no cover
        direction = rng.normal(size=3)
    radius = trans_noise_m * rng.uniform() ** (1.0 / 3.0) if trans_noise_m > 0 else 0.0
    if angle == 0.0 and radius == 0.0:
        return t
    rot = rotation_about_axis(axis, angle) if angle > 0 else np.eye(3)
    shift = direction / np.linalg.norm(direction) * radius
    return compose(RigidTransform(rot, shift), t)
