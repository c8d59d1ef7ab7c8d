"""Pose history, bone/displacement features and short-horizon forecasting.

The learned sequence model is not shipped; forecasters implement the
:class:`Forecaster` protocol and the constant-velocity least-squares fit is
the baseline used by the simulator.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .perception import BONE_INDEX, BONES, JOINT_INDEX, N_BONES, N_SKELETON_JOINTS, ROOT_JOINT, Skeleton

WINDOW_FRAMES = 30
HORIZON_STEPS = 10
FRAME_DT = 0.1


def horizon_weights(n_steps: int = HORIZON_STEPS, decay: float = 0.9) -> np.ndarray:
    """Weights for steps ``0..n_steps``: ``decay**i`` (step 0 is the current pose)."""
    if not 0 < decay <= 1:
        raise ValueError("weight decay must lie in (0, 1]")
    return decay ** np.arange(n_steps + 1, dtype=float)


@dataclass(frozen=True)
class PoseWindow:
    frames: tuple[Skeleton, ...]
    times: np.ndarray

    def __post_init__(self):
        frames = tuple(self.frames)
        times = np.asarray(self.times, dtype=float)
        if len(frames) == 0 or times.shape != (len(frames),):
            raise ValueError("window needs one timestamp per frame")
        if np.any(np.diff(times) <= 0):
            raise ValueError("window timestamps must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def positions(self) -> np.ndarray:
        return np.stack([f.positions for f in self.frames])

    @property
    def validity(self) -> np.ndarray:
        return np.stack([f.valid for f in self.frames])

    def translated(self, offset) -> "PoseWindow":
        return PoseWindow(tuple(f.translated(offset) for f in self.frames), self.times)


class PoseHistory:
    """Fixed-capacity buffer of timestamped skeletons."""

    def __init__(self, capacity: int = WINDOW_FRAMES):
        self._frames: deque[Skeleton] = deque(maxlen=capacity)
        self._times: deque[float] = deque(maxlen=capacity)

    def push(self, t: float, skeleton: Skeleton) -> None:
        if self._times and t <= self._times[-1]:
            raise ValueError("history timestamps must increase")
        self._frames.append(skeleton)
        self._times.append(float(t))

    def __len__(self) -> int:
        return len(self._frames)

    def window(self) -> PoseWindow:
        return PoseWindow(tuple(self._frames), np.array(self._times))


@dataclass(frozen=True)
class PoseForecast:
    """Current pose (step 0) followed by ``n_steps`` predicted skeletons.

    ``times[i]`` is the absolute time of step ``i``; ``weights[i]`` the
    horizon weight applied to it by the risk metric.
    """

    steps: tuple[Skeleton, ...]
    times: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        steps = tuple(self.steps)
        times = np.asarray(self.times, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if len(steps) == 0 or times.shape != (len(steps),) or weights.shape != (len(steps),):
            raise ValueError("forecast needs one time and one weight per step")
        if np.any(np.diff(times) <= 0):
            raise ValueError("forecast timestamps must be strictly increasing")
        if np.any(weights <= 0) or np.any(weights > 1) or np.any(np.diff(weights) > 0):
            raise ValueError("horizon weights must lie in (0, 1] and be non-increasing")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "weights", weights)

    @property
    def n_steps(self) -> int:
        """Number of predicted steps (excluding the current pose)."""
        return len(self.steps) - 1

    @property
    def predicted(self) -> tuple[Skeleton, ...]:
        return self.steps[1:]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.steps) > 1 else FRAME_DT

    def with_weights(self, weights) -> "PoseForecast":
        return PoseForecast(self.steps, self.times, weights)

    @classmethod
    def static(cls, skeleton: Skeleton, t0: float = 0.0, n_steps: int = HORIZON_STEPS,
               dt: float = FRAME_DT, weights=None) -> "PoseForecast":
        w = horizon_weights(n_steps) if weights is None else weights
        return cls(tuple([skeleton] * (n_steps + 1)), t0 + dt * np.arange(n_steps + 1), w)


class Forecaster(Protocol):
    """Maps an observation window to a forecast of exactly ``n_steps`` predictions."""

    def __call__(self, window: PoseWindow, n_steps: int = HORIZON_STEPS) -> PoseForecast: ...


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoneFeatures:
    bone_units: np.ndarray      # (T, 14, 3)
    displacements: np.ndarray   # (T, 15, 3), first frame zero


def bone_vectors(positions: np.ndarray) -> np.ndarray:
    """Raw ``child - parent`` vectors for positions of shape (..., 15, 3)."""
    return positions[..., BONE_INDEX[:, 1], :] - positions[..., BONE_INDEX[:, 0], :]


def bone_lengths(s: Skeleton) -> np.ndarray:
    return np.linalg.norm(bone_vectors(s.positions), axis=-1)


def _unit_bones(positions: np.ndarray) -> np.ndarray:
    v = bone_vectors(positions)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("degenerate skeleton: zero-length bone")
    return v / n


def extract_features(window: PoseWindow) -> BoneFeatures:
    if not np.all(window.validity):
        raise ValueError("feature extraction needs fully valid frames")
    pos = window.positions
    units = _unit_bones(pos)
    disp = np.zeros_like(pos)
    disp[1:] = pos[1:] - pos[:-1]
    return BoneFeatures(units, disp)


def _reconstruction_order() -> list[tuple[int, bool]]:
    # (bone index, forward) in an order that always starts from a placed joint
    placed = {ROOT_JOINT}
    order: list[tuple[int, bool]] = []
    remaining = list(range(N_BONES))
    while remaining:
        for b in list(remaining):
            parent, child = BONES[b]
            if parent in placed:
                order.append((b, True))
                placed.add(child)
                remaining.remove(b)
            elif child in placed:
                order.append((b, False))
                placed.add(parent)
                remaining.remove(b)
    return order


_ORDER = _reconstruction_order()


def reconstruct_pose(root, bone_units, lengths) -> Skeleton:
    """Rebuild joint positions by walking the bone tree outward from L3."""
    units = np.asarray(bone_units, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    if units.shape != (N_BONES, 3) or lengths.shape != (N_BONES,):
        raise ValueError("need 14 bone vectors and 14 lengths")
    if np.any(np.abs(np.linalg.norm(units, axis=-1) - 1.0) > 1e-6):
        raise ValueError("bone vectors must be unit length")
    if np.any(lengths <= 0):
        raise ValueError("bone lengths must be positive")
    pos = np.zeros((N_SKELETON_JOINTS, 3))
    pos[JOINT_INDEX[ROOT_JOINT]] = root
    for b, forward in _ORDER:
        p, c = BONE_INDEX[b]
        if forward:
            pos[c] = pos[p] + lengths[b] * units[b]
        else:
            pos[p] = pos[c] - lengths[b] * units[b]
    return Skeleton(pos)


# ---------------------------------------------------------------------------
# forecasting
# ---------------------------------------------------------------------------

def _hold(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    # carry the last valid entry forward; leading gaps take the first valid one
    out = values.copy()
    first = int(np.argmax(valid))
    last = values[first].copy()
    for t in range(len(values)):
        if valid[t]:
            last = values[t].copy()
        else:
            out[t] = last
    return out


def fill_occlusions(window: PoseWindow, frame: str = "world") -> tuple[np.ndarray, np.ndarray]:
    """Hold each joint at its last valid position; returns (positions, seen).

    ``frame="world"`` holds the absolute position. ``frame="body"`` holds the
    joint's offset from L3 instead, so an occluded limb travels with a
    walking person rather than staying where it was last seen (L3 itself is
    held in the world frame). Leading gaps take the first valid
    observation. ``seen[j]`` is False for joints never observed in the
    window; their positions stay undefined.
    """
    if frame not in ("world", "body"):
        raise ValueError("frame must be 'world' or 'body'")
    pos = window.positions.copy()
    valid = window.validity
    seen = valid.any(axis=0)
    root = JOINT_INDEX[ROOT_JOINT]
    gappy = np.flatnonzero(seen & ~valid.all(axis=0))
    if seen[root] and not valid[:, root].all():
        pos[:, root] = _hold(pos[:, root], valid[:, root])
    body = frame == "body" and seen[root]
    for j in gappy:
        if j == root:
            continue
        if body:
            rel = _hold(pos[:, j] - pos[:, root], valid[:, j])
            pos[:, j] = np.where(valid[:, j, None], pos[:, j], pos[:, root] + rel)
        else:
            pos[:, j] = _hold(pos[:, j], valid[:, j])
    return pos, seen


def fit_velocity(times: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Least-squares slope of positions (T, ...) against times (T,)."""
    tc = times - times.mean()
    denom = float(np.dot(tc, tc))
    centered = positions - positions.mean(axis=0)
    return np.tensordot(tc, centered, axes=(0, 0)) / denom


def predict_constant_velocity(
    window: PoseWindow,
    n_steps: int = HORIZON_STEPS,
    dt: float = FRAME_DT,
    weights=None,
    fill: str = "world",
) -> PoseForecast:
    """Extrapolate each joint from the last frame with its fitted velocity.

    Step ``k`` (``k = 0..n_steps``) is ``last + k * dt * v``; step 0 is the
    current (occlusion-filled) pose.
    """
    if len(window) < 2:
        raise ValueError("constant-velocity forecast needs at least two frames")
    pos, seen = fill_occlusions(window, fill)
    vel = fit_velocity(window.times, pos)
    last = pos[-1]
    t_last = float(window.times[-1])
    steps = []
    for k in range(n_steps + 1):
        p = last + (k * dt) * vel
        p[~seen] = 0.0
        steps.append(Skeleton(p, seen.copy()))
    w = horizon_weights(n_steps) if weights is None else np.asarray(weights, dtype=float)
    return PoseForecast(tuple(steps), t_last + dt * np.arange(n_steps + 1), w)


class ConstantVelocityForecaster:
    def __init__(self, dt: float = FRAME_DT, weights=None, fill: str = "world"):
        self.dt = dt
        self.weights = weights
        self.fill = fill

    def __call__(self, window: PoseWindow, n_steps: int = HORIZON_STEPS) -> PoseForecast:
        return predict_constant_velocity(window, n_steps, self.dt, self.weights, self.fill)


class StaticForecaster:
    """Predicts that the human stays at the last observed pose."""

    def __init__(self, dt: float = FRAME_DT, weights=None):
        self.dt = dt
        self.weights = weights

    def __call__(self, window: PoseWindow, n_steps: int = HORIZON_STEPS) -> PoseForecast:
        pos, seen = fill_occlusions(window)
        last = pos[-1].copy()
        last[~seen] = 0.0
        sk = Skeleton(last, seen)
        return PoseForecast.static(sk, float(window.times[-1]), n_steps, self.dt, self.weights)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    position: float = 1.0
    bone: float = 0.5

    def __post_init__(self):
        if self.position < 0 or self.bone < 0 or (self.position == 0 and self.bone == 0):
            raise ValueError("loss weights must be non-negative and not both zero")


def prediction_loss(pred: Sequence[Skeleton], truth: Sequence[Skeleton], weights: LossWeights = LossWeights()) -> float:
    """Position MSE plus mean bone-direction mismatch ``1 - cos``."""
    if len(pred) != len(truth):
        raise ValueError("prediction and ground truth must have equal length")
    if len(pred) == 0:
        raise ValueError("empty sequences")
    if not all(s.fully_valid for s in pred) or not all(s.fully_valid for s in truth):
        raise ValueError("loss needs fully valid skeletons")
    p = np.stack([s.positions for s in pred])
    t = np.stack([s.positions for s in truth])
    mse = float(np.mean((p - t) ** 2))
    up, ut = _unit_bones(p), _unit_bones(t)
    # 1 - cos written as half the squared chord between unit vectors:
    # exactly zero for identical bones and never negative
    mismatch = 0.5 * np.sum((up - ut) ** 2, axis=-1)
    return weights.position * mse + weights.bone * float(np.mean(mismatch))
