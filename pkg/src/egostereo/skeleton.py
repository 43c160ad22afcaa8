"""Joint/bone definitions and 3D pose value types."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .geometry import RigidTransform

SKELETON_FORMAT_VERSION = 1

JOINT_NAMES = (
    "head",
    "neck",
    "left_upper_arm",
    "left_lower_arm",
    "left_hand",
    "left_thigh",
    "left_calf",
    "left_foot",
    "left_ball",
    "right_upper_arm",
    "right_lower_arm",
    "right_hand",
    "right_thigh",
    "right_calf",
    "right_foot",
    "right_ball",
)
J = {name: i for i, name in enumerate(JOINT_NAMES)}

# Thighs hang off the neck: the 16-joint set has no pelvis.
BONE_EDGES = (
    (J["head"], J["neck"]),
    (J["neck"], J["left_upper_arm"]),
    (J["left_upper_arm"], J["left_lower_arm"]),
    (J["left_lower_arm"], J["left_hand"]),
    (J["neck"], J["right_upper_arm"]),
    (J["right_upper_arm"], J["right_lower_arm"]),
    (J["right_lower_arm"], J["right_hand"]),
    (J["neck"], J["left_thigh"]),
    (J["left_thigh"], J["left_calf"]),
    (J["left_calf"], J["left_foot"]),
    (J["left_foot"], J["left_ball"]),
    (J["neck"], J["right_thigh"]),
    (J["right_thigh"], J["right_calf"]),
    (J["right_calf"], J["right_foot"]),
    (J["right_foot"], J["right_ball"]),
)

FOOT_JOINTS = (J["left_foot"], J["left_ball"], J["right_foot"], J["right_ball"])


class FrameTag(str, enum.Enum):
    DEVICE = "device"
    PELVIS = "pelvis"
    WORLD = "world"


@dataclass(frozen=True)
class SkeletonDefinition:
    joint_names: tuple
    heatmap_joint_indices: tuple
    bone_edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "heatmap_joint_indices", tuple(int(i) for i in self.heatmap_joint_indices))
        object.__setattr__(self, "bone_edges", tuple((int(p), int(c)) for p, c in self.bone_edges))
        n = len(self.joint_names)
        if len(self.bone_edges) != n - 1:
            raise ValueError(f"a tree over {n} joints needs {n - 1} bones, got {len(self.bone_edges)}")
        for p, c in self.bone_edges:
            if not (0 <= p < n and 0 <= c < n) or p == c:
                raise ValueError(f"invalid bone edge {(p, c)}")
        if not self._connected():
            raise ValueError("bone graph is not a connected tree")
        if any(not 0 <= i < n for i in self.heatmap_joint_indices):
            raise ValueError("heatmap joint index out of range")

    def _connected(self):
        n = len(self.joint_names)
        adj = {i: set() for i in range(n)}
        for p, c in self.bone_edges:
            adj[p].add(c)
            adj[c].add(p)
        seen, stack = {0}, [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == n

    @property
    def num_joints(self):
        return len(self.joint_names)

    @property
    def num_bones(self):
        return len(self.bone_edges)

    @property
    def parents(self):
        return [p for p, _ in self.bone_edges]

    @property
    def children(self):
        return [c for _, c in self.bone_edges]

    def index(self, name):
        return self.joint_names.index(name)

    def to_dict(self):
        return {
            "version": SKELETON_FORMAT_VERSION,
            "joint_names": list(self.joint_names),
            "heatmap_joint_indices": list(self.heatmap_joint_indices),
            "bone_edges": [list(e) for e in self.bone_edges],
        }

    @classmethod
    def from_dict(cls, d):
        if int(d.get("version", 0)) != SKELETON_FORMAT_VERSION:
            raise ValueError(f"unsupported skeleton format version {d.get('version')}")
        return cls(tuple(d["joint_names"]), tuple(d["heatmap_joint_indices"]), tuple(map(tuple, d["bone_edges"])))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


CANONICAL_SKELETON = SkeletonDefinition(JOINT_NAMES, tuple(range(1, 16)), BONE_EDGES)


@dataclass(frozen=True)
class Pose3D:
    """Joints in metres, canonical order, in the frame named by ``frame_tag``."""

    joints: np.ndarray
    frame_tag: FrameTag = FrameTag.DEVICE

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3:
            raise ShapeError(f"pose joints must be (J, 3), got {j.shape}")
        if not np.isfinite(j).all():
            raise ValueError("pose coordinates must be finite")
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "frame_tag", FrameTag(self.frame_tag))

    def with_joints(self, joints, frame_tag=None):
        return Pose3D(joints, self.frame_tag if frame_tag is None else frame_tag)


@dataclass(frozen=True)
class BoneSet:
    bones: np.ndarray


def _joints_of(pose):
    return pose.joints if isinstance(pose, Pose3D) else pose


def bone_vectors(joints, skel=CANONICAL_SKELETON):
    """Array-level bones over the last two axes; works for numpy and torch."""
    if joints.shape[-2] != skel.num_joints:
        raise ShapeError(f"pose has {joints.shape[-2]} joints, skeleton expects {skel.num_joints}")
    return joints[..., list(skel.children), :] - joints[..., list(skel.parents), :]


def bones(pose, skel=CANONICAL_SKELETON):
    return BoneSet(bone_vectors(np.asarray(_joints_of(pose), dtype=np.float64), skel))


def pelvis_proxy(joints):
    """Midpoint of the two thigh joints."""
    joints = np.asarray(joints, dtype=np.float64)
    return 0.5 * (joints[..., J["left_thigh"], :] + joints[..., J["right_thigh"], :])


def to_pelvis_relative(pose):
    if pose.joints.shape[0] != len(JOINT_NAMES):
        raise ShapeError("pelvis conversion needs the canonical 16-joint skeleton")
    return Pose3D(pose.joints - pelvis_proxy(pose.joints), FrameTag.PELVIS)


def to_device_relative(pose_world, device_frame):
    if pose_world.frame_tag != FrameTag.WORLD:
        raise ValueError(f"expected a world-frame pose, got {pose_world.frame_tag.value}")
    if not isinstance(device_frame, RigidTransform):
        device_frame = RigidTransform.from_matrix(device_frame)
    return Pose3D(device_frame.inverse().apply(pose_world.joints), FrameTag.DEVICE)


def to_world(pose_device, device_frame):
    if pose_device.frame_tag != FrameTag.DEVICE:
        raise ValueError(f"expected a device-frame pose, got {pose_device.frame_tag.value}")
    return Pose3D(device_frame.apply(pose_device.joints), FrameTag.WORLD)


def save_poses(path, poses):
    """Write poses as nested JSON arrays, canonical joint order, float64."""
    data = [np.asarray(_joints_of(p), dtype=np.float64).tolist() for p in poses]
    Path(path).write_text(json.dumps(data))


def load_poses(path, frame_tag=FrameTag.DEVICE):
    return [Pose3D(np.array(p, dtype=np.float64), frame_tag) for p in json.loads(Path(path).read_text())]
