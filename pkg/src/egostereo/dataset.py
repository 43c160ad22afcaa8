"""Dataset manifest I/O, window sampling with initial-frame padding, GT heatmaps.

Layout on disk::

    root/manifest.json
    root/<sequence>/img_l/000000.png ...   RGB 256x256
    root/<sequence>/depth_l/000000.png ... uint16, 1 mm / unit, 64x64

``manifest.json`` holds ``{sequences: [{id, fps, frames: [{idx, img_l, img_r,
depth_l, depth_r, depth_available, pose, device_frame, joints2d_l,
joints2d_r}]}]}``. ``pose`` is the 16x3 world-frame pose, ``device_frame``
the 4x4 rig-to-world matrix and ``joints2d_*`` 15 (u, v) pairs with ``null``
for joints outside the view. Optional top-level ``camera``/``room``/``skeleton``
and per-sequence ``category`` keys are carried through when present.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import IntegrityError, NotADatasetError
from .geometry import FisheyeCamera, RigidTransform
from .scene_depth import DiskDepthProvider, Room
from .skeleton import CANONICAL_SKELETON, FrameTag, Pose3D, to_device_relative

MANIFEST_NAME = "manifest.json"
IMAGE_RES = 256
HEATMAP_RES = 64
HEATMAP_SIGMA = 1.5
NUM_HEATMAP_JOINTS = 15
VIEWS = ("l", "r")


@dataclass(frozen=True)
class FrameRecord:
    sequence_id: str
    frame_index: int
    image_paths: tuple
    gt_pose_world: Pose3D
    device_frame: RigidTransform
    gt_joints2d: np.ndarray  # (2, 15, 2), NaN rows for absent joints
    depth_available: bool
    depth_paths: tuple = (None, None)
    mask_paths: tuple = (None, None)

    def load_image(self, view):
        path = self.image_paths[0 if view == "l" else 1]
        with Image.open(path) as im:
            return np.array(im.convert("RGB"))

    def load_images(self):
        return np.stack([self.load_image(v) for v in VIEWS])

    @property
    def gt_pose_device(self):
        return to_device_relative(self.gt_pose_world, self.device_frame)


@dataclass(frozen=True)
class Sequence:
    id: str
    fps: float
    frames: tuple
    category: str | None = None

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    sequences: tuple
    camera: FisheyeCamera | None = None
    baseline: float | None = None
    room: Room | None = None

    @property
    def num_frames(self):
        return sum(len(s) for s in self.sequences)

    def frames(self):
        for seq in self.sequences:
            yield from seq.frames


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------

def _joints2d_to_json(arr):
    return [None if not np.isfinite(p).all() else [float(p[0]), float(p[1])] for p in arr]


def _joints2d_from_json(items):
    if items is None:
        return np.full((NUM_HEATMAP_JOINTS, 2), np.nan)
    return np.array([[np.nan, np.nan] if p is None else p for p in items], dtype=np.float64).reshape(-1, 2)


def frame_to_manifest(frame, root):
    root = Path(root)

    def rel(p):
        return None if p is None else Path(p).relative_to(root).as_posix()

    entry = {
        "idx": int(frame.frame_index),
        "img_l": rel(frame.image_paths[0]),
        "img_r": rel(frame.image_paths[1]),
        "depth_l": rel(frame.depth_paths[0]),
        "depth_r": rel(frame.depth_paths[1]),
        "depth_available": bool(frame.depth_available),
        "pose": frame.gt_pose_world.joints.tolist(),
        "device_frame": frame.device_frame.to_matrix().tolist(),
        "joints2d_l": _joints2d_to_json(frame.gt_joints2d[0]),
        "joints2d_r": _joints2d_to_json(frame.gt_joints2d[1]),
    }
    if frame.mask_paths[0] is not None:
        entry["mask_l"] = rel(frame.mask_paths[0])
        entry["mask_r"] = rel(frame.mask_paths[1])
    return entry


def write_manifest(root, sequences, extra=None):
    root = Path(root)
    doc = dict(extra or {})
    doc["sequences"] = [
        {
            "id": seq.id,
            "fps": seq.fps,
            **({"category": seq.category} if seq.category else {}),
            "frames": [frame_to_manifest(f, root) for f in seq.frames],
        }
        for seq in sequences
    ]
    path = root / MANIFEST_NAME
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
    tmp.replace(path)
    return path


def load_dataset(root, check_files=True):
    """Index a dataset directory; images are read lazily.

    Raises :class:`NotADatasetError` without a manifest and
    :class:`IntegrityError` listing every referenced file that is missing.
    """
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise NotADatasetError(f"{root} has no {MANIFEST_NAME}")
    try:
        doc = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise NotADatasetError(f"{manifest} is not valid JSON: {exc}") from exc

    def path(p):
        return None if p is None else root / p

    missing = []
    sequences = []
    for s in doc.get("sequences", []):
        frames = []
        last = None
        for f in s.get("frames", []):
            idx = int(f["idx"])
            if last is not None and idx <= last:
                raise IntegrityError(f"frame indices not increasing in sequence {s['id']}")
            last = idx
            images = (path(f["img_l"]), path(f["img_r"]))
            depths = (path(f.get("depth_l")), path(f.get("depth_r")))
            masks = (path(f.get("mask_l")), path(f.get("mask_r")))
            if check_files:
                missing.extend(p for p in images if not p.is_file())
                if f.get("depth_available", False):
                    missing.extend(p for p in depths if p is None or not p.is_file())
            frames.append(
                FrameRecord(
                    sequence_id=str(s["id"]),
                    frame_index=idx,
                    image_paths=images,
                    gt_pose_world=Pose3D(np.array(f["pose"], dtype=np.float64), FrameTag.WORLD),
                    device_frame=RigidTransform.from_matrix(f["device_frame"]),
                    gt_joints2d=np.stack([_joints2d_from_json(f.get("joints2d_l")), _joints2d_from_json(f.get("joints2d_r"))]),
                    depth_available=bool(f.get("depth_available", False)),
                    depth_paths=depths,
                    mask_paths=masks,
                )
            )
        sequences.append(Sequence(str(s["id"]), float(s.get("fps", 25)), tuple(frames), s.get("category")))
    if missing:
        raise IntegrityError("dataset references missing files", missing)
    camera = baseline = room = None
    if "camera" in doc:
        camera = FisheyeCamera.from_dict(doc["camera"])
        baseline = float(doc["camera"].get("baseline_m", 0.12))
    if "room" in doc:
        room = Room(tuple(doc["room"]["size"]))
    return DatasetIndex(root, tuple(sequences), camera, baseline, room)


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------

def window_indices(length, T, skip):
    """(length, T) frame indices; row t is ``t - (T-1)*skip, ..., t`` clamped at 0."""
    if T < 1 or skip < 1:
        raise ValueError("T and skip must be >= 1")
    if length < 1:
        raise ValueError("sequence must be non-empty")
    offsets = (np.arange(T) - (T - 1)) * skip
    return np.maximum(np.arange(length)[:, None] + offsets[None, :], 0)


@dataclass
class SequenceSample:
    """A T-frame stereo window whose target is the last frame.

    Heavy fields are computed on first access.
    """

    frames: tuple
    indices: np.ndarray
    depth_provider: object = field(default_factory=DiskDepthProvider)
    heatmap_sigma: float = HEATMAP_SIGMA

    @property
    def T(self):
        return len(self.frames)

    @property
    def target_index(self):
        return self.T - 1

    @cached_property
    def images(self):
        """(T, 2, 256, 256, 3) uint8."""
        return np.stack([f.load_images() for f in self.frames])

    @cached_property
    def gt_heatmaps(self):
        """(T, 2, 15, 64, 64) float64."""
        return np.stack(
            [np.stack([render_gt_heatmap(f.gt_joints2d[v], self.heatmap_sigma) for v in range(2)]) for f in self.frames]
        )

    @cached_property
    def depth_observations(self):
        return [[self.depth_provider(f, v) for v in VIEWS] for f in self.frames]

    @cached_property
    def gt_poses(self):
        return [f.gt_pose_device for f in self.frames]


def sample_windows(sequence, T, skip, depth_provider=None):
    """One sample per original frame, padding the start with frame 0."""
    frames = sequence.frames if hasattr(sequence, "frames") else tuple(sequence)
    idx = window_indices(len(frames), T, skip)
    kw = {} if depth_provider is None else {"depth_provider": depth_provider}
    return [SequenceSample(tuple(frames[i] for i in row), row, **kw) for row in idx]


# ---------------------------------------------------------------------------
# Heatmaps
# ---------------------------------------------------------------------------

def render_gt_heatmap(joints2d, sigma=HEATMAP_SIGMA, out_res=(HEATMAP_RES, HEATMAP_RES), in_res=IMAGE_RES, backend=None):
    """(15, h, w) Gaussians peaking at ``joints2d / (in_res / out_res)``.

    NaN joints give all-zero channels.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    w, h = out_res
    centers = np.asarray(joints2d, dtype=np.float64).reshape(-1, 2) * (w / in_res)
    return kernels.gaussian_heatmaps(centers, sigma, h, w, backend)


def gt_heatmaps_for_frames(frames, sigma=HEATMAP_SIGMA):
    """(N, 2, 15, 64, 64) float32 for a list of frame records."""
    out = np.empty((len(frames), 2, NUM_HEATMAP_JOINTS, HEATMAP_RES, HEATMAP_RES), dtype=np.float32)
    for i, f in enumerate(frames):
        for v in range(2):
            out[i, v] = render_gt_heatmap(f.gt_joints2d[v], sigma)
    return out


def dataset_statistics(index):
    frames = list(index.frames())
    vis = np.array([np.isfinite(f.gt_joints2d).all(axis=-1).mean() for f in frames]) if frames else np.zeros(0)
    return {
        "sequences": len(index.sequences),
        "frames": len(frames),
        "depth_available_fraction": float(np.mean([f.depth_available for f in frames])) if frames else 0.0,
        "visible_joint_fraction": float(vis.mean()) if frames else 0.0,
        "categories": sorted({s.category or "uncategorized" for s in index.sequences}),
        "skeleton_joints": CANONICAL_SKELETON.num_joints,
    }
