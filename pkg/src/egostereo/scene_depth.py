"""Scene depth observations, body-mask providers and reconstruction windows.

Depth maps store the range along each pixel's fisheye ray in metres at a
quarter of the image resolution. On disk they are 16-bit grayscale PNG at
1 mm per unit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import DecodeError, InternalConsistencyError, MaskUnavailableError, ShapeError
from .geometry import pixel_grid, unproject_pixels

DEPTH_RES = 64
DEPTH_DOWNSAMPLE = 4
DEPTH_MM_PER_UNIT = 1.0
DEPTH_CLAMP_M = 10.0
PROMPT_CONFIDENCE = 0.3


@dataclass(frozen=True)
class Room:
    """Closed axis-aligned box ``[0, size]``; the floor is ``y = 0``."""

    size: tuple = (6.0, 3.0, 6.0)

    def __post_init__(self):
        s = tuple(float(x) for x in self.size)
        if len(s) != 3 or min(s) <= 0:
            raise ValueError("room dimensions must be three positive numbers")
        object.__setattr__(self, "size", s)

    @property
    def box_min(self):
        return np.zeros(3)

    @property
    def box_max(self):
        return np.array(self.size)

    def contains(self, point, margin=0.0):
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p > margin) and np.all(p < self.box_max - margin))

    def distance_to_surface(self, points):
        """Unsigned distance of each point to the nearest box face."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.minimum(np.abs(p), np.abs(self.box_max - p)).min(axis=1)


@dataclass
class DepthObservation:
    """Quarter-resolution depth (metres) with its region mask and availability."""

    depth: np.ndarray
    region_mask: np.ndarray
    available: bool = True

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.region_mask = np.asarray(self.region_mask, dtype=bool)
        if self.depth.shape != self.region_mask.shape or self.depth.ndim != 2:
            raise ShapeError("depth and region mask must be matching 2D grids")

    @classmethod
    def empty(cls, shape=(DEPTH_RES, DEPTH_RES)):
        return cls(np.zeros(shape), np.zeros(shape, dtype=bool), False)

    def check(self):
        """Assert the observation invariant; returns self."""
        if self.available:
            ok = np.array_equal(self.depth > 0, self.region_mask)
        else:
            ok = not self.depth.any() and not self.region_mask.any()
        if not ok:
            raise InternalConsistencyError("depth / region mask invariant violated")
        return self

    def normalized(self):
        """(2, H, W) float32 network input: clamped depth / 10 m and region mask."""
        d = np.where(self.region_mask, np.clip(self.depth, 0.0, DEPTH_CLAMP_M) / DEPTH_CLAMP_M, 0.0)
        return np.stack([d, self.region_mask.astype(np.float64)]).astype(np.float32)


def padding_value(obs):
    """Additive attention-logit term for one view-frame: ``-inf`` if unavailable."""
    return 0.0 if obs.available else float("-inf")


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------

def downsample_mask(mask, factor=DEPTH_DOWNSAMPLE):
    """Max-pool a full-resolution mask onto the grid ``(row, col) * factor``.

    Each coarse pixel covers the ``factor x factor`` window centred on its
    full-resolution sample point, clipped to the image.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    padded = np.zeros((h + factor, w + factor), dtype=bool)
    half = factor // 2
    padded[half:half + h, half:half + w] = mask
    blocks = padded[: (h // factor) * factor, : (w // factor) * factor]
    return blocks.reshape(h // factor, factor, w // factor, factor).any(axis=(1, 3))


def depth_ray_grid(cam, out_res=DEPTH_RES):
    """Camera-frame unit rays for the coarse grid, (out_res*out_res, 3); NaN off-circle."""
    stride = cam.width / out_res
    return unproject_pixels(pixel_grid(out_res, out_res, stride), cam)


def depth_from_scene(room, camera_pose, cam, body_mask=None, out_res=DEPTH_RES, backend=None):
    """Ray-cast the room box from a camera and mask out the body.

    ``body_mask`` may be full resolution (downsampled here) or already at
    ``out_res``. Pixels outside the image circle are left unobserved.
    """
    if not room.contains(camera_pose.translation):
        raise InternalConsistencyError("camera centre lies outside the room")
    rays = depth_ray_grid(cam, out_res) @ camera_pose.rotation.T
    on_circle = np.isfinite(rays).all(axis=1)
    t, face = kernels.cast_room(camera_pose.translation, rays, room.box_min, room.box_max, backend)
    if np.any(on_circle & ((face < 0) | ~np.isfinite(t))):
        raise InternalConsistencyError("a ray escaped the closed room")
    depth = np.where(on_circle, t, 0.0).reshape(out_res, out_res)
    region = on_circle.reshape(out_res, out_res) & (depth > 0)
    if body_mask is not None:
        bm = np.asarray(body_mask, dtype=bool)
        if bm.shape != (out_res, out_res):
            bm = downsample_mask(bm, bm.shape[0] // out_res)
        region &= ~bm
    depth = np.where(region, depth, 0.0)
    return DepthObservation(depth, region, True)


# ---------------------------------------------------------------------------
# Depth codec
# ---------------------------------------------------------------------------

def encode_depth(obs):
    units = np.round(obs.depth * 1000.0 / DEPTH_MM_PER_UNIT)
    units = np.where(obs.region_mask, np.clip(units, 1, 65535), 0)
    return units.astype(np.uint16)


def save_depth(path, obs):
    Image.fromarray(encode_depth(obs)).save(path)


def load_depth(path, available, expected_shape=(DEPTH_RES, DEPTH_RES)):
    """Decode a 16-bit depth PNG; unavailable frames return the empty observation."""
    if not available:
        return DepthObservation.empty(expected_shape)
    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DecodeError(f"cannot decode depth file {path}: {exc}") from exc
    if arr.shape != tuple(expected_shape):
        raise DecodeError(f"depth file {path} has shape {arr.shape}, expected {tuple(expected_shape)}")
    if arr.dtype not in (np.uint16, np.int32, np.uint8):
        raise DecodeError(f"depth file {path} has unsupported dtype {arr.dtype}")
    depth = arr.astype(np.float64) * DEPTH_MM_PER_UNIT / 1000.0
    return DepthObservation(depth, depth > 0, True)


# ---------------------------------------------------------------------------
# Reconstruction windows
# ---------------------------------------------------------------------------

def reconstruction_windows(num_frames, window_seconds=4.0, fps=25):
    """Consecutive frame-index windows of ``floor(window_seconds * fps)`` frames.

    A trailing shorter window is kept.
    """
    if num_frames <= 0:
        raise ValueError("sequence must be non-empty")
    size = max(1, int(math.floor(window_seconds * fps)))
    return [np.arange(s, min(s + size, num_frames)) for s in range(0, num_frames, size)]


# ---------------------------------------------------------------------------
# Body-mask providers
# ---------------------------------------------------------------------------

def prompt_points(heatmaps, threshold=PROMPT_CONFIDENCE, downsample=DEPTH_DOWNSAMPLE):
    """Full-resolution point prompts from (J, h, w) heatmaps above ``threshold``."""
    from .heatmap2d import heatmap_argmax

    pts = []
    for channel in np.asarray(heatmaps):
        (u, v), conf = heatmap_argmax(channel)
        if conf > threshold:
            pts.append((u * downsample, v * downsample))
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


class NullMaskProvider:
    name = "null"

    def __call__(self, image, prompts, frame=None, view=None):
        img = np.asarray(image)
        return np.zeros(img.shape[:2], dtype=bool)


class OracleMaskProvider:
    """Body silhouette re-rendered from a synthetic frame's ground truth."""

    name = "oracle"

    def __init__(self, scene):
        self.scene = scene

    def __call__(self, image, prompts, frame=None, view=None):
        if frame is None or view is None:
            raise MaskUnavailableError("oracle provider needs the frame record and view")
        return self.scene.silhouette(frame, view)


class DiskMaskProvider:
    """Reads precomputed masks ``<root>/<sequence>/<frame:06d>_<view>.png``.

    External promptable-segmentation output plugs in through this layout.
    """

    name = "disk"

    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, frame, view):
        return self.root / str(frame.sequence_id) / f"{frame.frame_index:06d}_{view}.png"

    def __call__(self, image, prompts, frame=None, view=None):
        if frame is None or view is None:
            raise MaskUnavailableError("disk provider needs the frame record and view")
        path = self.path_for(frame, view)
        try:
            with Image.open(path) as im:
                return np.array(im.convert("L")) > 0
        except (FileNotFoundError, OSError) as exc:
            raise MaskUnavailableError(f"mask file unavailable: {path}") from exc


def body_mask(image, prompts, provider, frame=None, view=None):
    mask = np.asarray(provider(image, prompts, frame=frame, view=view), dtype=bool)
    if mask.shape != np.asarray(image).shape[:2]:
        raise MaskUnavailableError(f"provider returned mask of shape {mask.shape}")
    return mask


def body_mask_or_null(image, prompts, provider, frame=None, view=None):
    try:
        return body_mask(image, prompts, provider, frame, view)
    except MaskUnavailableError:
        return NullMaskProvider()(image, prompts)


# ---------------------------------------------------------------------------
# Depth providers
# ---------------------------------------------------------------------------

class NoDepthProvider:
    name = "none"

    def __call__(self, frame, view):
        return DepthObservation.empty()


class DiskDepthProvider:
    """Depth files referenced by the dataset manifest."""

    name = "disk"

    def __call__(self, frame, view):
        path = frame.depth_paths[0 if view == "l" else 1]
        return load_depth(path, frame.depth_available)


@dataclass
class OracleDepthProvider:
    """Ray-cast depth from known room geometry, masking the body via ``mask_provider``."""

    scene: object
    mask_provider: object = None
    backend: str = None
    name: str = field(default="oracle", init=False)

    def __call__(self, frame, view):
        if not frame.depth_available:
            return DepthObservation.empty()
        provider = self.mask_provider or OracleMaskProvider(self.scene)
        res = self.scene.camera.resolution
        dummy = np.zeros((res[1], res[0], 3), dtype=np.uint8)
        mask = body_mask_or_null(dummy, np.zeros((0, 2)), provider, frame, view)
        pose = self.scene.camera_pose(frame, view)
        return depth_from_scene(self.scene.room, pose, self.scene.camera, mask, backend=self.backend)
