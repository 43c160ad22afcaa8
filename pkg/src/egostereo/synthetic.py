"""Procedural stand-in dataset: an animated stick figure in a box room.

A 16-joint skeleton is driven by seeded sinusoid mixtures on joint angles
(so bone lengths stay fixed), a stereo fisheye rig rides on the head looking
down, and each view is ray cast against the room box and the body capsules.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .dataset import VIEWS, FrameRecord, Sequence, load_dataset, write_manifest
from .geometry import (
    DEFAULT_BASELINE_M,
    FisheyeCamera,
    RigidTransform,
    StereoRig,
    pixel_grid,
    project_points,
    rot_x,
    rot_y,
    rot_z,
    unproject_pixels,
)
from .scene_depth import Room, depth_from_scene, save_depth
from .skeleton import CANONICAL_SKELETON, FOOT_JOINTS, FrameTag, J, Pose3D

REFERENCE_HEIGHT = 1.7
FOOT_CLEARANCE = 0.02


@dataclass
class SyntheticSceneConfig:
    room: tuple = (6.0, 3.0, 6.0)
    skeleton_scale: float = 1.7
    motion_seed: int = 0
    num_frames: int = 100
    fps: float = 25.0
    depth_dropout_prob: float = 0.0
    heatmap_sigma: float = 1.5
    num_sequences: int = 1
    resolution: int = 256
    fov_deg: float = 170.0
    baseline_m: float = DEFAULT_BASELINE_M
    camera_tilt_deg: float = 35.0
    category: str = "synthetic"

    def __post_init__(self):
        self.room = tuple(float(x) for x in self.room)
        if not 0.0 <= self.depth_dropout_prob <= 1.0:
            raise ValueError("depth_dropout_prob must lie in [0, 1]")
        if min(self.room) <= 0 or self.skeleton_scale <= 0:
            raise ValueError("dimensions must be positive")
        if self.num_frames < 1 or self.num_sequences < 0:
            raise ValueError("num_frames must be >= 1")

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = asdict(self)
        d["room"] = list(self.room)
        return d

    def camera(self):
        return FisheyeCamera.centered(self.resolution, self.fov_deg)


# ---------------------------------------------------------------------------
# Motion
# ---------------------------------------------------------------------------

# name: (base, amplitude, low Hz, high Hz)
ANGLE_SPECS = {
    "spine_pitch": (-0.05, 0.10, 0.15, 0.6),
    "spine_roll": (0.0, 0.08, 0.15, 0.6),
    "spine_yaw": (0.0, 0.20, 0.15, 0.6),
    "head_pitch": (0.35, 0.20, 0.15, 0.6),
    "head_yaw": (0.0, 0.30, 0.15, 0.6),
    "l_arm_swing": (0.15, 0.70, 0.2, 0.8),
    "r_arm_swing": (0.15, 0.70, 0.2, 0.8),
    "l_arm_abd": (0.30, 0.25, 0.2, 0.8),
    "r_arm_abd": (0.30, 0.25, 0.2, 0.8),
    "l_elbow": (0.90, 0.70, 0.2, 0.8),
    "r_elbow": (0.90, 0.70, 0.2, 0.8),
    "l_hip": (0.15, 0.45, 0.2, 0.8),
    "r_hip": (0.15, 0.45, 0.2, 0.8),
    "l_hip_abd": (0.05, 0.10, 0.2, 0.8),
    "r_hip_abd": (0.05, 0.10, 0.2, 0.8),
    "l_knee": (0.40, 0.40, 0.2, 0.8),
    "r_knee": (0.40, 0.40, 0.2, 0.8),
    "l_ankle": (0.0, 0.20, 0.2, 0.8),
    "r_ankle": (0.0, 0.20, 0.2, 0.8),
    "root_yaw": (0.0, 0.80, 0.05, 0.2),
    "root_x": (0.0, 1.0, 0.05, 0.15),
    "root_z": (0.0, 1.0, 0.05, 0.15),
}
ANGLE_LIMITS = {"l_elbow": (0.0, 2.4), "r_elbow": (0.0, 2.4), "l_knee": (0.0, 2.2), "r_knee": (0.0, 2.2)}


def sinusoid_mixture(rng, times, base, amplitude, f_lo, f_hi, components=3):
    freqs = rng.uniform(f_lo, f_hi, components)
    phases = rng.uniform(0.0, 2.0 * math.pi, components)
    weights = rng.dirichlet(np.ones(components)) * amplitude
    return base + (weights[None, :] * np.sin(2.0 * math.pi * freqs[None, :] * times[:, None] + phases[None, :])).sum(axis=1)


def sample_angle_tracks(rng, num_frames, fps):
    times = np.arange(num_frames) / fps
    tracks = {}
    for name, (base, amp, lo, hi) in ANGLE_SPECS.items():
        tr = sinusoid_mixture(rng, times, base, amp, lo, hi)
        if name in ANGLE_LIMITS:
            tr = np.clip(tr, *ANGLE_LIMITS[name])
        tracks[name] = tr
    tracks["root_yaw"] = tracks["root_yaw"] + rng.uniform(-math.pi, math.pi)
    return tracks


def pose_from_angles(a, k=1.0):
    """Body-frame joints (x right, y up, z forward), pelvis at the origin.

    Also returns the head rotation, used to mount the rig.
    """
    joints = np.zeros((16, 3))
    r_spine = rot_y(a["spine_yaw"]) @ rot_x(a["spine_pitch"]) @ rot_z(a["spine_roll"])
    neck = r_spine @ np.array([0.0, 0.50 * k, 0.0])
    r_head = r_spine @ rot_y(a["head_yaw"]) @ rot_x(a["head_pitch"])
    joints[J["neck"]] = neck
    joints[J["head"]] = neck + r_head @ np.array([0.0, 0.20 * k, 0.0])
    down = np.array([0.0, -1.0, 0.0])
    for side, sign in (("left", -1.0), ("right", 1.0)):
        s = side[0]
        shoulder = neck + r_spine @ np.array([sign * 0.18 * k, -0.03 * k, 0.0])
        r_arm = r_spine @ rot_z(sign * a[f"{s}_arm_abd"]) @ rot_x(-a[f"{s}_arm_swing"])
        elbow = shoulder + r_arm @ (0.28 * k * down)
        hand = elbow + r_arm @ rot_x(-a[f"{s}_elbow"]) @ (0.26 * k * down)
        hip = np.array([sign * 0.10 * k, -0.05 * k, 0.0])
        r_leg = rot_z(sign * a[f"{s}_hip_abd"]) @ rot_x(-a[f"{s}_hip"])
        knee = hip + r_leg @ (0.43 * k * down)
        ankle = knee + r_leg @ rot_x(a[f"{s}_knee"]) @ (0.42 * k * down)
        ball = ankle + rot_y(sign * 0.15) @ rot_x(a[f"{s}_ankle"]) @ np.array([0.0, -0.04 * k, 0.14 * k])
        joints[J[f"{side}_upper_arm"]] = shoulder
        joints[J[f"{side}_lower_arm"]] = elbow
        joints[J[f"{side}_hand"]] = hand
        joints[J[f"{side}_thigh"]] = hip
        joints[J[f"{side}_calf"]] = knee
        joints[J[f"{side}_foot"]] = ankle
        joints[J[f"{side}_ball"]] = ball
    return joints, r_head


def rig_frame(head_world, r_head_world, tilt):
    """Rig-to-world transform: 10 cm in front of the head, axis pitched down."""
    axes = np.stack(
        [
            np.array([1.0, 0.0, 0.0]),
            np.array([0.0, math.sin(tilt), math.cos(tilt)]),
            np.array([0.0, -math.cos(tilt), math.sin(tilt)]),
        ],
        axis=1,
    )
    rot = r_head_world @ axes
    # re-orthonormalise against accumulated rounding
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    origin = head_world + r_head_world @ np.array([0.0, -0.03, 0.10])
    return RigidTransform(rot, origin)


def animate(config, rng):
    """World-frame poses (N, 16, 3) and rig transforms for one sequence."""
    n = config.num_frames
    tracks = sample_angle_tracks(rng, n, config.fps)
    k = config.skeleton_scale / REFERENCE_HEIGHT
    room = np.array(config.room)
    centre = room / 2.0
    reach = np.maximum(0.0, np.array([room[0], room[2]]) / 2.0 - 1.0)
    poses = np.zeros((n, 16, 3))
    rigs = []
    tilt = math.radians(config.camera_tilt_deg)
    for i in range(n):
        a = {name: tr[i] for name, tr in tracks.items()}
        local, r_head = pose_from_angles(a, k)
        r_root = rot_y(a["root_yaw"])
        world = local @ r_root.T
        lift = FOOT_CLEARANCE * k - world[list(FOOT_JOINTS), 1].min()
        offset = np.array([centre[0] + reach[0] * a["root_x"], lift, centre[2] + reach[1] * a["root_z"]])
        world = world + offset
        poses[i] = world
        rigs.append(rig_frame(world[J["head"]], r_root @ r_head, tilt))
    return poses, rigs


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

# (parent, child, radius / m at reference height, rgb)
BODY_CAPSULES = [
    ("neck", "left_upper_arm", 0.045, (230, 60, 60)),
    ("left_upper_arm", "left_lower_arm", 0.045, (240, 120, 40)),
    ("left_lower_arm", "left_hand", 0.040, (250, 200, 40)),
    ("neck", "right_upper_arm", 0.045, (60, 90, 230)),
    ("right_upper_arm", "right_lower_arm", 0.045, (40, 180, 240)),
    ("right_lower_arm", "right_hand", 0.040, (120, 240, 240)),
    ("left_thigh", "left_calf", 0.060, (200, 40, 160)),
    ("left_calf", "left_foot", 0.050, (240, 100, 200)),
    ("left_foot", "left_ball", 0.040, (250, 170, 230)),
    ("right_thigh", "right_calf", 0.060, (40, 160, 60)),
    ("right_calf", "right_foot", 0.050, (110, 220, 110)),
    ("right_foot", "right_ball", 0.040, (190, 250, 160)),
    ("neck", "left_thigh", 0.050, (150, 150, 150)),
    ("neck", "right_thigh", 0.050, (120, 120, 120)),
    ("left_thigh", "right_thigh", 0.040, (100, 100, 100)),
]
FACE_COLORS = np.array(
    [[170, 150, 120], [120, 150, 170], [110, 100, 90], [225, 225, 215], [150, 170, 120], [170, 120, 150]],
    dtype=np.float64,
)
FACE_TILE = np.array([1.0, 1.0, 0.5, 1.0, 1.0, 1.0])
# in-plane axes per face
FACE_AXES = np.array([[1, 2], [1, 2], [0, 2], [0, 2], [0, 1], [0, 1]])


@lru_cache(maxsize=8)
def camera_rays(cam, stride=1.0):
    """Camera-frame unit rays for the full pixel grid (row-major), NaN off-circle."""
    w, h = int(round(cam.width / stride)), int(round(cam.height / stride))
    rays = unproject_pixels(pixel_grid(w, h, stride), cam)
    rays.setflags(write=False)
    return rays


def body_capsules(joints_world, k):
    a = np.array([joints_world[J[p]] for p, _, _, _ in BODY_CAPSULES])
    b = np.array([joints_world[J[c]] for _, c, _, _ in BODY_CAPSULES])
    r = np.array([rad * k for _, _, rad, _ in BODY_CAPSULES])
    return a, b, r


def render_view(cam, cam_pose, room, joints_world, k=1.0, backend=None):
    """Ray cast one fisheye view. Returns ``(rgb uint8 HxWx3, silhouette bool HxW)``."""
    rays = camera_rays(cam) @ cam_pose.rotation.T
    on_circle = np.isfinite(rays).all(axis=1)
    origin = cam_pose.translation
    t_room, face = kernels.cast_room(origin, rays, room.box_min, room.box_max, backend)
    seg_a, seg_b, radius = body_capsules(joints_world, k)
    t_body, which = kernels.cast_capsules(origin, rays, seg_a, seg_b, radius, backend)
    body = on_circle & (which >= 0) & (t_body < np.where(on_circle, t_room, np.inf))

    n = rays.shape[0]
    color = np.zeros((n, 3))
    room_px = on_circle & ~body
    f = face[room_px]
    pts = origin + rays[room_px] * t_room[room_px][:, None]
    ax = FACE_AXES[f]
    rows = np.arange(len(f))
    tile = FACE_TILE[f]
    parity = (np.floor(pts[rows, ax[:, 0]] / tile) + np.floor(pts[rows, ax[:, 1]] / tile)) % 2
    color[room_px] = FACE_COLORS[f] * (0.75 + 0.25 * parity)[:, None]
    palette = np.array([c for _, _, _, c in BODY_CAPSULES], dtype=np.float64)
    color[body] = palette[which[body]]
    img = np.clip(np.round(color), 0, 255).astype(np.uint8).reshape(cam.height, cam.width, 3)
    return img, body.reshape(cam.height, cam.width)


@dataclass
class SyntheticScene:
    """Known geometry of a synthetic dataset, used by the oracle providers."""

    camera: FisheyeCamera
    room: Room
    baseline: float = DEFAULT_BASELINE_M
    skeleton_scale: float = REFERENCE_HEIGHT
    backend: str = None
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_index(cls, index, backend=None):
        doc = json.loads((Path(index.root) / "manifest.json").read_text())
        scale = float(doc.get("synthetic", {}).get("skeleton_scale", REFERENCE_HEIGHT))
        return cls(index.camera, index.room, index.baseline, scale, backend)

    @property
    def k(self):
        return self.skeleton_scale / REFERENCE_HEIGHT

    def rig(self, device_frame):
        return StereoRig(self.camera, self.camera, self.baseline, device_frame)

    def camera_pose(self, frame, view):
        left, right = self.rig(frame.device_frame).camera_poses()
        return left if view == "l" else right

    def render(self, frame, view):
        key = (frame.sequence_id, frame.frame_index, view)
        if key not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = render_view(
                self.camera, self.camera_pose(frame, view), self.room, frame.gt_pose_world.joints, self.k, self.backend
            )
        return self._cache[key]

    def silhouette(self, frame, view):
        return self.render(frame, view)[1]


def project_heatmap_joints(joints_world, cam_pose, cam):
    """(15, 2) pixels of the heatmap joints; NaN where out of view."""
    local = cam_pose.inverse().apply(joints_world[list(CANONICAL_SKELETON.heatmap_joint_indices)])
    return project_points(local, cam)


def generate_synthetic(config, out_root, backend=None):
    """Write a complete synthetic dataset under ``out_root`` and index it."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    cam = config.camera()
    room = Room(config.room)
    k = config.skeleton_scale / REFERENCE_HEIGHT
    seeds = np.random.SeedSequence(config.motion_seed).spawn(max(config.num_sequences, 1))
    sequences = []
    for s in range(config.num_sequences):
        motion_rng, dropout_rng = (np.random.default_rng(x) for x in seeds[s].spawn(2))
        seq_id = f"seq_{s:03d}"
        seq_dir = out_root / seq_id
        for sub in ("img_l", "img_r", "depth_l", "depth_r", "mask_l", "mask_r"):
            (seq_dir / sub).mkdir(parents=True, exist_ok=True)
        poses, rigs = animate(config, motion_rng)
        available = dropout_rng.random(config.num_frames) >= config.depth_dropout_prob
        frames = []
        for i in range(config.num_frames):
            rig = StereoRig(cam, cam, config.baseline_m, rigs[i])
            cam_poses = rig.camera_poses()
            joints2d = np.stack([project_heatmap_joints(poses[i], cp, cam) for cp in cam_poses])
            paths = {}
            for view, cp in zip(VIEWS, cam_poses):
                img, sil = render_view(cam, cp, room, poses[i], k, backend)
                paths[f"img_{view}"] = seq_dir / f"img_{view}" / f"{i:06d}.png"
                paths[f"mask_{view}"] = seq_dir / f"mask_{view}" / f"{i:06d}.png"
                paths[f"depth_{view}"] = seq_dir / f"depth_{view}" / f"{i:06d}.png"
                Image.fromarray(img).save(paths[f"img_{view}"])
                Image.fromarray((sil * 255).astype(np.uint8)).save(paths[f"mask_{view}"])
                if available[i]:
                    save_depth(paths[f"depth_{view}"], depth_from_scene(room, cp, cam, sil, backend=backend))
            frames.append(
                FrameRecord(
                    sequence_id=seq_id,
                    frame_index=i,
                    image_paths=(paths["img_l"], paths["img_r"]),
                    gt_pose_world=Pose3D(poses[i], FrameTag.WORLD),
                    device_frame=rigs[i],
                    gt_joints2d=joints2d,
                    depth_available=bool(available[i]),
                    depth_paths=(paths["depth_l"], paths["depth_r"]) if available[i] else (None, None),
                    mask_paths=(paths["mask_l"], paths["mask_r"]),
                )
            )
        sequences.append(Sequence(seq_id, config.fps, tuple(frames), config.category))
    extra = {
        "camera": cam.to_dict(config.baseline_m),
        "room": {"size": list(config.room)},
        "skeleton": CANONICAL_SKELETON.to_dict(),
        "synthetic": config.to_dict(),
    }
    write_manifest(out_root, sequences, extra)
    return load_dataset(out_root)
