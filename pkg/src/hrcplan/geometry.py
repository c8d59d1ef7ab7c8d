"""Minimum-distance kernels for points, segments and capsules.

Every kernel is written once in vectorized form over arrays of shape
``(..., 3)``; the scalar entry points call the same kernels with a leading
batch dimension of one, which is what makes batch and scalar results
bitwise identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# squared-length below which a segment is treated as a point
_DEGENERATE_SQ = 1e-18


def _dot(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # explicit three-term sum: fixed evaluation order regardless of batch shape
    return u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1] + u[..., 2] * v[..., 2]


def _norm(u: np.ndarray) -> np.ndarray:
    return np.sqrt(_dot(u, u))


def as_vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector components must be finite")
    return arr


@dataclass(frozen=True)
class Segment:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", as_vec3(self.a))
        object.__setattr__(self, "b", as_vec3(self.b))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    def point(self, t: float) -> np.ndarray:
        return self.a + t * (self.b - self.a)


@dataclass(frozen=True)
class Capsule:
    """Segment swept by a sphere of ``radius`` meters."""

    axis: Segment
    radius: float

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"capsule radius must be positive, got {self.radius}")

    @classmethod
    def from_points(cls, a, b, radius: float) -> "Capsule":
        return cls(Segment(a, b), float(radius))


def pack_capsules(capsules: Sequence[Capsule]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack capsules into ``(A, B, R)`` arrays of shapes (n,3), (n,3), (n,)."""
    n = len(capsules)
    a = np.empty((n, 3))
    b = np.empty((n, 3))
    r = np.empty(n)
    for i, c in enumerate(capsules):
        a[i] = c.axis.a
        b[i] = c.axis.b
        r[i] = c.radius
    return a, b, r


# ---------------------------------------------------------------------------
# vectorized kernels
# ---------------------------------------------------------------------------

def point_segment_distance_v(p, a, b) -> np.ndarray:
    """Broadcasting point-to-segment distance."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    dd = _dot(d, d)
    safe = np.where(dd > _DEGENERATE_SQ, dd, 1.0)
    t = np.where(dd > _DEGENERATE_SQ, _dot(p - a, d) / safe, 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * d
    return _norm(p - closest)


def _segment_segment_oneway(p1, q1, p2, q2) -> np.ndarray:
    # Closest points of two segments by the clamped quadratic construction
    # (Ericson, Real-Time Collision Detection, 5.1.9), branch-free.
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    c = _dot(d1, r)
    b = _dot(d1, d2)

    deg1 = a <= _DEGENERATE_SQ
    deg2 = e <= _DEGENERATE_SQ
    a_safe = np.where(deg1, 1.0, a)
    e_safe = np.where(deg2, 1.0, e)

    denom = a * e - b * b
    # parallel (or degenerate) segments: pick s = 0 and let the clamping fix t
    par = denom <= 1e-14 * a_safe * e_safe
    denom_safe = np.where(par, 1.0, denom)
    s = np.where(par, 0.0, np.clip((b * f - c * e) / denom_safe, 0.0, 1.0))
    t = (b * s + f) / e_safe

    lo = t < 0.0
    hi = t > 1.0
    s = np.where(lo, np.clip(-c / a_safe, 0.0, 1.0), s)
    s = np.where(hi, np.clip((b - c) / a_safe, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # degenerate branches
    t_only = np.clip(f / e_safe, 0.0, 1.0)
    s_only = np.clip(-c / a_safe, 0.0, 1.0)
    s = np.where(deg1, 0.0, np.where(deg2, s_only, s))
    t = np.where(deg1, np.where(deg2, 0.0, t_only), np.where(deg2, 0.0, t))

    c1 = p1 + s[..., None] * d1
    c2 = p2 + t[..., None] * d2
    return _norm(c1 - c2)


def segment_segment_distance_v(a1, b1, a2, b2) -> np.ndarray:
    """Broadcasting segment-to-segment distance, exactly symmetric.

    Both argument orders are evaluated and the smaller result kept, so
    swapping the segments returns the identical float.
    """
    a1 = np.asarray(a1, dtype=float)
    b1 = np.asarray(b1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    return np.minimum(
        _segment_segment_oneway(a1, b1, a2, b2),
        _segment_segment_oneway(a2, b2, a1, b1),
    )


def capsule_distance_v(a1, b1, r1, a2, b2, r2) -> np.ndarray:
    """Broadcasting signed capsule distance (negative means penetration)."""
    return segment_segment_distance_v(a1, b1, a2, b2) - r1 - r2


# ---------------------------------------------------------------------------
# scalar API
# ---------------------------------------------------------------------------

def point_segment_distance(p, s: Segment) -> float:
    p = as_vec3(p)
    return float(point_segment_distance_v(p[None], s.a[None], s.b[None])[0])


def segment_segment_distance(s1: Segment, s2: Segment) -> float:
    return float(segment_segment_distance_v(s1.a[None], s1.b[None], s2.a[None], s2.b[None])[0])


def capsule_capsule_distance(c1: Capsule, c2: Capsule) -> float:
    return float(
        capsule_distance_v(
            c1.axis.a[None], c1.axis.b[None], np.array([c1.radius]),
            c2.axis.a[None], c2.axis.b[None], np.array([c2.radius]),
        )[0]
    )


def batch_capsule_distances(set1: Sequence[Capsule], set2: Sequence[Capsule]) -> np.ndarray:
    """Signed distance matrix; element ``[j, k]`` pairs ``set1[j]`` with ``set2[k]``."""
    if len(set1) == 0 or len(set2) == 0:
        return np.zeros((len(set1), len(set2)))
    a1, b1, r1 = pack_capsules(set1)
    a2, b2, r2 = pack_capsules(set2)
    return capsule_distance_v(
        a1[:, None, :], b1[:, None, :], r1[:, None],
        a2[None, :, :], b2[None, :, :], r2[None, :],
    )
