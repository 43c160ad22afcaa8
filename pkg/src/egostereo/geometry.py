"""Fisheye camera model, rigid/similarity transforms and Procrustes alignment.

Camera frame convention (OpenCV): +x right, +y down, +z along the optical
axis. Pixel coordinates are ``(u, v) = (column, row)`` with pixel centres at
integer coordinates.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentDegenerateError,
    DegenerateInputError,
    InvalidTransformError,
    OutOfViewError,
    ShapeError,
)

DEFAULT_FOV_DEG = 170.0
DEFAULT_BASELINE_M = 0.12
ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class FisheyeCamera:
    """Equidistant fisheye intrinsics: image radius ``r = focal_scale * theta``."""

    focal_scale: float
    principal_point: tuple[float, float]
    resolution: tuple[int, int]
    fov: float = math.radians(DEFAULT_FOV_DEG)

    def __post_init__(self):
        object.__setattr__(self, "principal_point", tuple(float(x) for x in self.principal_point))
        object.__setattr__(self, "resolution", tuple(int(x) for x in self.resolution))
        if not 0.0 < self.fov < math.pi:
            raise ValueError(f"fov must lie in (0, pi), got {self.fov}")
        if self.focal_scale <= 0:
            raise ValueError("focal_scale must be positive")
        w, h = self.resolution
        cx, cy = self.principal_point
        if not (0.0 <= cx <= w and 0.0 <= cy <= h):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def centered(cls, resolution=256, fov_deg=DEFAULT_FOV_DEG):
        """Camera whose fov/2 ray lands exactly on the inscribed image circle."""
        fov = math.radians(fov_deg)
        radius = resolution / 2.0
        return cls(radius / (fov / 2.0), (radius, radius), (resolution, resolution), fov)

    @property
    def width(self):
        return self.resolution[0]

    @property
    def height(self):
        return self.resolution[1]

    @property
    def image_circle_radius(self):
        return self.focal_scale * self.fov / 2.0

    def scaled(self, factor):
        """Intrinsics for an image resampled by ``factor`` (pixel ``p -> p * factor``)."""
        w, h = self.resolution
        return FisheyeCamera(
            self.focal_scale * factor,
            (self.principal_point[0] * factor, self.principal_point[1] * factor),
            (int(round(w * factor)), int(round(h * factor))),
            self.fov,
        )

    def to_dict(self, baseline_m=DEFAULT_BASELINE_M):
        return {
            "focal_scale": self.focal_scale,
            "principal_point": list(self.principal_point),
            "resolution": list(self.resolution),
            "fov_deg": math.degrees(self.fov),
            "baseline_m": baseline_m,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["focal_scale"]),
            tuple(d["principal_point"]),
            tuple(d["resolution"]),
            math.radians(float(d.get("fov_deg", DEFAULT_FOV_DEG))),
        )


def save_camera_json(path, cam, baseline_m=DEFAULT_BASELINE_M):
    Path(path).write_text(json.dumps(cam.to_dict(baseline_m), indent=2, sort_keys=True))


def load_camera_json(path):
    """Returns ``(camera, baseline_m)``."""
    d = json.loads(Path(path).read_text())
    return FisheyeCamera.from_dict(d), float(d.get("baseline_m", DEFAULT_BASELINE_M))


def project_points(points, cam):
    """Vectorised :func:`fisheye_project`; out-of-view rows are NaN.

    Raises :class:`DegenerateInputError` if any point has zero norm.
    """
    p = np.asarray(points, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ShapeError(f"expected (..., 3) points, got {p.shape}")
    flat = p.reshape(-1, 3)
    if not np.isfinite(flat).all():
        raise DegenerateInputError("points must be finite")
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot project a point at the camera centre")
    rho = np.hypot(flat[:, 0], flat[:, 1])
    theta = np.arctan2(rho, flat[:, 2])
    r = cam.focal_scale * theta
    safe = np.where(rho > 0.0, rho, 1.0)
    u = cam.principal_point[0] + np.where(rho > 0.0, r * flat[:, 0] / safe, 0.0)
    v = cam.principal_point[1] + np.where(rho > 0.0, r * flat[:, 1] / safe, 0.0)
    w, h = cam.resolution
    visible = (theta <= cam.fov / 2.0) & (u >= 0.0) & (u < w) & (v >= 0.0) & (v < h)
    out = np.stack([u, v], axis=1)
    out[~visible] = np.nan
    return out.reshape(p.shape[:-1] + (2,))


def fisheye_project(point, cam):
    """Project one camera-frame point; ``None`` marks an out-of-view point."""
    uv = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), cam)[0]
    if np.isnan(uv).any():
        return None
    return uv


def unproject_pixels(pixels, cam):
    """Unit rays for (N, 2) pixels; pixels beyond the image circle give NaN rows."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    du = px[:, 0] - cam.principal_point[0]
    dv = px[:, 1] - cam.principal_point[1]
    r = np.hypot(du, dv)
    theta = r / cam.focal_scale
    s = np.sin(theta)
    safe = np.where(r > 0.0, r, 1.0)
    rays = np.stack(
        [np.where(r > 0.0, s * du / safe, 0.0), np.where(r > 0.0, s * dv / safe, 0.0), np.cos(theta)],
        axis=1,
    )
    rays[theta > cam.fov / 2.0] = np.nan
    return rays


def fisheye_unproject(pixel, cam):
    u, v = (float(x) for x in pixel)
    w, h = cam.resolution
    if not (0.0 <= u <= w and 0.0 <= v <= h):
        raise OutOfViewError(f"pixel {(u, v)} lies outside the {w}x{h} image")
    ray = unproject_pixels([[u, v]], cam)[0]
    if np.isnan(ray).any():
        raise OutOfViewError(f"pixel {(u, v)} lies beyond the image circle")
    return ray


def pixel_grid(width, height, stride=1.0):
    """(H*W, 2) pixel coordinates ``(u, v) = (col*stride, row*stride)``, row-major."""
    cols, rows = np.meshgrid(np.arange(width) * stride, np.arange(height) * stride)
    return np.stack([cols.ravel(), rows.ravel()], axis=1).astype(np.float64)


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def check_rotation(rotation, tol=ORTHO_TOL):
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3):
        raise InvalidTransformError(f"rotation must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0.0):
        raise InvalidTransformError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise InvalidTransformError("rotation has det != +1")
    return r


@dataclass(frozen=True)
class RigidTransform:
    """Maps local points to the parent frame: ``x_parent = R @ x_local + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points):
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def to_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidTransformError(f"expected 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])


@dataclass(frozen=True)
class StereoRig:
    """Two fisheye cameras sharing orientation, offset by ``baseline`` along rig x.

    The rig origin is the midpoint between optical centres; the left camera
    sits at ``-baseline/2`` on the rig x axis.
    """

    left_cam: FisheyeCamera
    right_cam: FisheyeCamera
    baseline: float = DEFAULT_BASELINE_M
    device_frame: RigidTransform = field(default_factory=RigidTransform.identity)

    def camera_offsets(self):
        half = self.baseline / 2.0
        return (
            RigidTransform(np.eye(3), [-half, 0.0, 0.0]),
            RigidTransform(np.eye(3), [half, 0.0, 0.0]),
        )

    def camera_poses(self):
        """Camera-to-world transforms for (left, right)."""
        left, right = self.camera_offsets()
        return self.device_frame.compose(left), self.device_frame.compose(right)

    def with_device_frame(self, device_frame):
        return StereoRig(self.left_cam, self.right_cam, self.baseline, device_frame)


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidTransformError("similarity scale must be positive")
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def apply(self, points):
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.rotation.T) + self.translation


def procrustes_align(source, target, rank_tol=1e-12):
    """Similarity transform minimising ``sum_j |s R x_j + t - y_j|^2``.

    Accepts (J, 3) arrays or objects with a ``joints`` attribute; the aligned
    result has the same type as ``source``. Reflections are excluded by the
    sign correction on the smallest singular direction.
    """
    x = np.asarray(getattr(source, "joints", source), dtype=np.float64)
    y = np.asarray(getattr(target, "joints", target), dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ShapeError(f"pose shapes differ or are not (J, 3): {x.shape} vs {y.shape}")
    if x.shape[0] < 3:
        raise ShapeError("procrustes alignment needs at least 3 joints")
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    var_x = (xc * xc).sum() / x.shape[0]
    if var_x == 0.0:
        raise AlignmentDegenerateError("source joints are all coincident")
    cov = yc.T @ xc / x.shape[0]
    u, sig, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rot = (u * d) @ vt
    scale = float((sig * d).sum() / var_x)
    transform = None
    if scale > 0:
        transform = SimilarityTransform(scale, rot, mu_y - scale * rot @ mu_x)
    if sig[1] <= rank_tol * max(sig[0], np.finfo(float).tiny) or transform is None:
        partial = None
        if transform is not None:
            partial = (transform, transform.apply(x))
        raise AlignmentDegenerateError("cross-covariance is rank deficient (collinear joints)", partial)
    aligned = transform.apply(x)
    if hasattr(source, "joints") and hasattr(source, "with_joints"):
        aligned = source.with_joints(aligned)
    return transform, aligned


# ---------------------------------------------------------------------------
# Rotation helpers
# ---------------------------------------------------------------------------

def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
