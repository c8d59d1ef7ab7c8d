"""Forward kinematics, link capsules and angle arithmetic for a 6-DOF arm."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .geometry import Capsule, Segment

N_JOINTS = 6
TWO_PI = 2.0 * math.pi


class ChainConfigError(ValueError):
    """Raised for malformed kinematic chain files."""


# ---------------------------------------------------------------------------
# angles
# ---------------------------------------------------------------------------

def wrap_angle(theta):
    """Wrap angles into ``[-pi, pi)``.

    Values already inside the range are returned untouched, so wrapping is
    exactly idempotent. Accepts scalars or arrays.
    """
    arr = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot wrap a non-finite angle")
    inside = (arr >= -math.pi) & (arr < math.pi)
    wrapped = np.mod(arr + math.pi, TWO_PI) - math.pi
    # np.mod may round up to exactly 2*pi for tiny negative arguments
    wrapped = np.where(wrapped >= math.pi, wrapped - TWO_PI, wrapped)
    out = np.where(inside, arr, wrapped)
    if np.ndim(theta) == 0:
        return float(out)
    return out


def wrapped_diff(q1, q2) -> np.ndarray:
    """Per-joint shortest signed arc from ``q1`` to ``q2`` (broadcasting)."""
    d = np.asarray(q2, dtype=float) - np.asarray(q1, dtype=float)
    return np.mod(d + math.pi, TWO_PI) - math.pi


def wrapped_distance(q1, q2) -> np.ndarray | float:
    """Euclidean norm of the wrapped difference along the last axis."""
    d = wrapped_diff(q1, q2)
    out = np.sqrt(np.sum(d * d, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def as_config(q) -> np.ndarray:
    arr = np.asarray(q, dtype=float)
    if arr.shape != (N_JOINTS,):
        raise ValueError(f"joint configuration must have {N_JOINTS} angles, got shape {arr.shape}")
    return wrap_angle(arr)


def angular_step(q1, q2, delta: float) -> np.ndarray:
    """Move from ``q1`` toward ``q2`` by at most ``delta`` along the shorter arcs.

    The direction is the wrapped difference vector normalized by its
    Euclidean norm; if the target lies within ``delta`` it is returned.
    """
    if not delta > 0:
        raise ValueError("step size must be positive")
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    d = wrapped_diff(q1, q2)
    n = float(np.sqrt(np.sum(d * d)))
    if n == 0.0:
        return q1.copy()
    if n <= delta:
        return wrap_angle(q2)
    return wrap_angle(q1 + (delta / n) * d)


def interpolate_edge(q1, q2, resolution: float) -> np.ndarray:
    """Configs along the shorter-arc edge, excluding ``q1``, including ``q2``.

    The number of pieces is chosen so that no joint moves more than
    ``resolution`` between consecutive samples. The last row is ``q2``
    exactly.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    d = wrapped_diff(q1, q2)
    n = max(1, int(math.ceil(float(np.max(np.abs(d))) / resolution - 1e-12)))
    frac = np.arange(1, n + 1, dtype=float)[:, None] / n
    pts = wrap_angle(q1[None, :] + frac * d[None, :])
    pts[-1] = q2
    return pts


# ---------------------------------------------------------------------------
# chain description
# ---------------------------------------------------------------------------

def _rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return rz @ ry @ rx


def make_transform(xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> np.ndarray:
    t = np.eye(4)
    t[:3, :3] = _rpy_matrix(*rpy)
    t[:3, 3] = xyz
    return t


@dataclass(frozen=True)
class DHChain:
    """Standard DH rows (a, d, alpha, theta_offset) plus the base pose."""

    a: np.ndarray
    d: np.ndarray
    alpha: np.ndarray
    theta_offset: np.ndarray
    base: np.ndarray
    name: str = "chain"

    def __post_init__(self):
        for field in ("a", "d", "alpha", "theta_offset"):
            arr = np.asarray(getattr(self, field), dtype=float)
            if arr.shape != (N_JOINTS,):
                raise ChainConfigError(f"DH table must have exactly {N_JOINTS} rows, got {arr.size}")
            if not np.all(np.isfinite(arr)):
                raise ChainConfigError(f"DH column {field!r} has non-finite values")
            object.__setattr__(self, field, arr)
        base = np.asarray(self.base, dtype=float)
        if base.shape != (4, 4) or not np.all(np.isfinite(base)):
            raise ChainConfigError("base transform must be a finite 4x4 matrix")
        object.__setattr__(self, "base", base)


@dataclass(frozen=True)
class LinkGeometry:
    """Capsule attachment per link: axis spans frame origins ``frames[l]``."""

    frames: tuple[tuple[int, int], ...]
    radii: np.ndarray

    def __post_init__(self):
        frames = tuple((int(i), int(j)) for i, j in self.frames)
        radii = np.asarray(self.radii, dtype=float)
        if len(frames) == 0 or radii.shape != (len(frames),):
            raise ChainConfigError("link geometry needs one radius per link")
        if not np.all(radii > 0):
            raise ChainConfigError("link capsule radii must be positive")
        for i, j in frames:
            if not (0 <= i <= N_JOINTS and 0 <= j <= N_JOINTS) or i == j:
                raise ChainConfigError(f"invalid capsule frame pair ({i}, {j})")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "radii", radii)

    @classmethod
    def uniform(cls, radius: float = 0.06) -> "LinkGeometry":
        frames = tuple((i, i + 1) for i in range(N_JOINTS))
        return cls(frames, np.full(N_JOINTS, radius))

    @property
    def n_links(self) -> int:
        return len(self.frames)


def chain_from_dict(data: dict) -> tuple[DHChain, LinkGeometry]:
    """Build a chain and its link geometry from the parsed YAML mapping."""
    if not isinstance(data, dict):
        raise ChainConfigError("chain file must contain a mapping")
    rows = data.get("dh")
    if not isinstance(rows, list):
        raise ChainConfigError("chain file needs a 'dh' list")
    if len(rows) != N_JOINTS:
        raise ChainConfigError(f"DH table must have exactly {N_JOINTS} rows, got {len(rows)}")
    try:
        cols = {k: [float(r[k]) for r in rows] for k in ("a", "d", "alpha")}
        cols["theta_offset"] = [float(r.get("theta_offset", 0.0)) for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise ChainConfigError(f"bad DH row: {exc}") from exc
    base_cfg = data.get("base") or {}
    base = make_transform(base_cfg.get("xyz", (0, 0, 0)), base_cfg.get("rpy", (0, 0, 0)))
    chain = DHChain(base=base, name=str(data.get("name", "chain")), **cols)

    links = data.get("links")
    if links is None:
        geo = LinkGeometry.uniform()
    else:
        try:
            geo = LinkGeometry(
                tuple(tuple(link["frames"]) for link in links),
                np.array([float(link["radius"]) for link in links]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ChainConfigError(f"bad link entry: {exc}") from exc
    return chain, geo


def load_chain(path: str | Path | None = None) -> tuple[DHChain, LinkGeometry]:
    """Load a chain file; ``None`` loads the bundled UR16e description."""
    if path is None or str(path) == "ur16e":
        text = resources.files("hrcplan.data").joinpath("ur16e.yaml").read_text()
    else:
        text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ChainConfigError(f"chain file is not valid YAML: {exc}") from exc
    return chain_from_dict(data)


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

def forward_kinematics(chain: DHChain, q) -> np.ndarray:
    """Homogeneous frames ``0..6`` for one or many configurations.

    ``q`` of shape (6,) gives (7, 4, 4); shape (M, 6) gives (M, 7, 4, 4).
    Frame 0 is the base pose, frame i composes the base with DH
    transforms 1..i.
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    qs = np.atleast_2d(q)
    m = qs.shape[0]
    theta = qs + chain.theta_offset[None, :]
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(chain.alpha), np.sin(chain.alpha)

    frames = np.empty((m, N_JOINTS + 1, 4, 4))
    frames[:, 0] = chain.base
    cur = np.broadcast_to(chain.base, (m, 4, 4))
    for i in range(N_JOINTS):
        t = np.zeros((m, 4, 4))
        t[:, 0, 0] = ct[:, i]
        t[:, 0, 1] = -st[:, i] * ca[i]
        t[:, 0, 2] = st[:, i] * sa[i]
        t[:, 0, 3] = chain.a[i] * ct[:, i]
        t[:, 1, 0] = st[:, i]
        t[:, 1, 1] = ct[:, i] * ca[i]
        t[:, 1, 2] = -ct[:, i] * sa[i]
        t[:, 1, 3] = chain.a[i] * st[:, i]
        t[:, 2, 1] = sa[i]
        t[:, 2, 2] = ca[i]
        t[:, 2, 3] = chain.d[i]
        t[:, 3, 3] = 1.0
        cur = cur @ t
        frames[:, i + 1] = cur
    return frames[0] if single else frames


def frame_origins(chain: DHChain, q) -> np.ndarray:
    return forward_kinematics(chain, q)[..., :3, 3]


def robot_capsule_arrays(chain: DHChain, geo: LinkGeometry, qs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched capsule endpoints: ``A, B`` of shape (M, L, 3) and radii (L,)."""
    origins = frame_origins(chain, np.atleast_2d(qs))
    idx_a = np.array([f[0] for f in geo.frames])
    idx_b = np.array([f[1] for f in geo.frames])
    return origins[:, idx_a], origins[:, idx_b], geo.radii


def robot_capsules(chain: DHChain, geo: LinkGeometry, q) -> list[Capsule]:
    a, b, r = robot_capsule_arrays(chain, geo, np.asarray(q, dtype=float)[None, :])
    return [Capsule(Segment(a[0, i], b[0, i]), float(r[i])) for i in range(geo.n_links)]


def link_lengths(chain: DHChain, geo: LinkGeometry, q) -> np.ndarray:
    a, b, _ = robot_capsule_arrays(chain, geo, np.asarray(q, dtype=float)[None, :])
    return np.linalg.norm(b[0] - a[0], axis=-1)


def default_robot() -> tuple[DHChain, LinkGeometry]:
    return load_chain(None)


def self_collision_pairs(geo: LinkGeometry, min_gap: int = 3) -> list[tuple[int, int]]:
    """Link index pairs checked for self-collision (links ``min_gap`` or more apart)."""
    n = geo.n_links
    return [(i, j) for i in range(n) for j in range(i + min_gap, n)]


def configs_array(configs: Sequence) -> np.ndarray:
    return np.asarray([as_config(q) for q in configs])
