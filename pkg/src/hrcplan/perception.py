"""Pixel/depth lifting, IMU tilt compensation and the 15-joint skeleton."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .geometry import Capsule, Segment

JOINT_NAMES: tuple[str, ...] = (
    "CLAV", "C7", "LSHO", "RSHO", "LAEL", "RAEL", "LWPS", "RWPS",
    "L3", "LHIP", "RHIP", "LKNE", "RKNE", "LHEE", "RHEE",
)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}
N_SKELETON_JOINTS = len(JOINT_NAMES)

# (parent, child) pairs of the fixed 14-bone tree
BONES: tuple[tuple[str, str], ...] = (
    ("CLAV", "C7"),
    ("C7", "LSHO"),
    ("C7", "RSHO"),
    ("LSHO", "LAEL"),
    ("LAEL", "LWPS"),
    ("RSHO", "RAEL"),
    ("RAEL", "RWPS"),
    ("C7", "L3"),
    ("L3", "LHIP"),
    ("L3", "RHIP"),
    ("LHIP", "LKNE"),
    ("LKNE", "LHEE"),
    ("RHIP", "RKNE"),
    ("RKNE", "RHEE"),
)
BONE_INDEX = np.array([[JOINT_INDEX[p], JOINT_INDEX[c]] for p, c in BONES])
N_BONES = len(BONES)
TORSO_BONES = frozenset({("C7", "L3"), ("CLAV", "C7"), ("L3", "LHIP"), ("L3", "RHIP")})
ROOT_JOINT = "L3"

LEFT_ARM = ("LAEL", "LWPS")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")


@dataclass(frozen=True)
class TiltAngles:
    roll: float = 0.0   # alpha, about x
    pitch: float = 0.0  # beta, about y


@dataclass(frozen=True)
class LiftedPoint:
    xyz: np.ndarray
    degenerate: bool = False  # no depth reading at this pixel


def lift_pixel(u: float, v: float, depth: float, k: CameraIntrinsics) -> LiftedPoint:
    """Back-project a pixel with metric depth into the camera frame.

    Camera frame: +X right, +Y forward along the optical axis, +Z up.
    """
    if depth < 0 or not math.isfinite(depth):
        raise ValueError("depth must be finite and non-negative")
    if depth == 0:
        return LiftedPoint(np.zeros(3), degenerate=True)
    x = (u - k.cx) * depth / k.fx
    z = (k.cy - v) * depth / k.fy
    return LiftedPoint(np.array([x, depth, z]))


def project_point(p_cam, k: CameraIntrinsics) -> tuple[float, float]:
    """Inverse of :func:`lift_pixel` for points in front of the camera."""
    x, y, z = np.asarray(p_cam, dtype=float)
    return k.cx + k.fx * x / y, k.cy - k.fy * z / y


def rot_x(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(beta: float) -> np.ndarray:
    c, s = math.cos(beta), math.sin(beta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def tilt_rotation(angles: TiltAngles) -> np.ndarray:
    """Camera-to-world rotation ``R_y(pitch) @ R_x(roll)``."""
    if not (math.isfinite(angles.roll) and math.isfinite(angles.pitch)):
        raise ValueError("tilt angles must be finite")
    return rot_y(angles.pitch) @ rot_x(angles.roll)


def to_world(p_cam, angles: TiltAngles) -> np.ndarray:
    return tilt_rotation(angles) @ np.asarray(p_cam, dtype=float)


# ---------------------------------------------------------------------------
# skeleton
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HumanGeometry:
    limb_radius: float = 0.08
    torso_radius: float = 0.15

    def __post_init__(self):
        if not (self.limb_radius > 0 and self.torso_radius > 0):
            raise ValueError("human capsule radii must be positive")

    def bone_radii(self) -> np.ndarray:
        return np.array([self.torso_radius if b in TORSO_BONES else self.limb_radius for b in BONES])


@dataclass(frozen=True)
class Skeleton:
    """15 world-frame joint positions (meters) in ``JOINT_NAMES`` order."""

    positions: np.ndarray
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (N_SKELETON_JOINTS, 3):
            raise ValueError(f"skeleton needs shape ({N_SKELETON_JOINTS}, 3), got {pos.shape}")
        valid = np.ones(N_SKELETON_JOINTS, bool) if self.valid is None else np.asarray(self.valid, bool)
        if valid.shape != (N_SKELETON_JOINTS,):
            raise ValueError("validity flags must have one entry per joint")
        if not np.all(np.isfinite(pos[valid])):
            raise ValueError("valid joints must have finite positions")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_dict(cls, joints: dict) -> "Skeleton":
        pos = np.zeros((N_SKELETON_JOINTS, 3))
        valid = np.zeros(N_SKELETON_JOINTS, bool)
        for name, xyz in joints.items():
            pos[JOINT_INDEX[name]] = xyz
            valid[JOINT_INDEX[name]] = True
        return cls(pos, valid)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.positions[JOINT_INDEX[name]]

    @property
    def fully_valid(self) -> bool:
        return bool(np.all(self.valid))

    def bone_valid(self) -> np.ndarray:
        return self.valid[BONE_INDEX[:, 0]] & self.valid[BONE_INDEX[:, 1]]

    def translated(self, offset) -> "Skeleton":
        return Skeleton(self.positions + np.asarray(offset, dtype=float), self.valid.copy())

    def with_invalid(self, names: Iterable[str]) -> "Skeleton":
        valid = self.valid.copy()
        for n in names:
            valid[JOINT_INDEX[n]] = False
        return Skeleton(self.positions.copy(), valid)


def skeleton_capsule_arrays(s: Skeleton, geo: HumanGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``(A, B, R, bone_ids)`` for every bone with both endpoints valid."""
    keep = np.flatnonzero(s.bone_valid())
    a = s.positions[BONE_INDEX[keep, 0]]
    b = s.positions[BONE_INDEX[keep, 1]]
    return a, b, geo.bone_radii()[keep], keep


def skeleton_capsules(s: Skeleton, geo: HumanGeometry) -> list[Capsule]:
    """Bone capsules; bones touching an invalid joint are omitted.

    An empty list means the human is fully occluded.
    """
    a, b, r, _ = skeleton_capsule_arrays(s, geo)
    return [Capsule(Segment(a[i], b[i]), float(r[i])) for i in range(len(r))]


def standing_skeleton(
    root=(0.0, 0.0, 0.0),
    heading: float = 0.0,
    height: float = 1.75,
) -> Skeleton:
    """Synthetic upright skeleton with arms hanging, heels on ``root``'s z.

    ``heading`` is the facing direction (radians about +z, 0 faces +x).
    L3 sits at the midpoint between C7 and the hip midpoint.
    """
    s = height / 1.75
    # body frame: +x forward, +y left, +z up
    local = {
        "LHEE": (0.0, 0.10, 0.05),
        "RHEE": (0.0, -0.10, 0.05),
        "LKNE": (0.02, 0.10, 0.50),
        "RKNE": (0.02, -0.10, 0.50),
        "LHIP": (0.0, 0.10, 0.95),
        "RHIP": (0.0, -0.10, 0.95),
        "C7": (-0.03, 0.0, 1.47),
        "CLAV": (0.04, 0.0, 1.43),
        "LSHO": (0.0, 0.19, 1.42),
        "RSHO": (0.0, -0.19, 1.42),
        "LAEL": (0.0, 0.21, 1.12),
        "RAEL": (0.0, -0.21, 1.12),
        "LWPS": (0.02, 0.21, 0.86),
        "RWPS": (0.02, -0.21, 0.86),
    }
    pos = np.zeros((N_SKELETON_JOINTS, 3))
    for name, xyz in local.items():
        pos[JOINT_INDEX[name]] = np.array(xyz) * s
    hip_mid = 0.5 * (pos[JOINT_INDEX["LHIP"]] + pos[JOINT_INDEX["RHIP"]])
    pos[JOINT_INDEX["L3"]] = 0.5 * (pos[JOINT_INDEX["C7"]] + hip_mid)
    c, sn = math.cos(heading), math.sin(heading)
    rz = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
    return Skeleton(pos @ rz.T + np.asarray(root, dtype=float))


# ---------------------------------------------------------------------------
# recorded-pose files (JSON lines)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoseFrame:
    t: float
    skeleton: Skeleton


def frame_to_record(frame: PoseFrame) -> dict:
    rows = [
        [float(x), float(y), float(z), int(v)]
        for (x, y, z), v in zip(frame.skeleton.positions, frame.skeleton.valid)
    ]
    return {"t": float(frame.t), "joints": rows}


def record_to_frame(rec: dict) -> PoseFrame:
    try:
        t = float(rec["t"])
        rows = rec["joints"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"pose record missing field: {exc}") from exc
    if isinstance(rows, dict):
        rows = [rows[name] for name in JOINT_NAMES]
    if len(rows) != N_SKELETON_JOINTS:
        raise ValueError(f"pose record needs {N_SKELETON_JOINTS} joints, got {len(rows)}")
    arr = np.asarray(rows, dtype=float)
    if arr.shape != (N_SKELETON_JOINTS, 4):
        raise ValueError("each joint row must be [x, y, z, valid]")
    valid = arr[:, 3] != 0
    pos = arr[:, :3].copy()
    pos[~valid] = np.where(np.isfinite(pos[~valid]), pos[~valid], 0.0)
    return PoseFrame(t, Skeleton(pos, valid))


def write_pose_file(path: str | Path, frames: Sequence[PoseFrame]) -> None:
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps(frame_to_record(f)) + "\n")


def iter_pose_file(path: str | Path) -> Iterator[PoseFrame]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield record_to_frame(json.loads(line))
            except (json.JSONDecodeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc


def read_pose_file(path: str | Path) -> list[PoseFrame]:
    frames = list(iter_pose_file(path))
    times = [f.t for f in frames]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError(f"{path}: frame timestamps must be strictly increasing")
    return frames
