"""Bidirectional, goal-biased, APF-pruned RRT* in wrapped joint space."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import capsule_distance_v
from .kinematics import (
    N_JOINTS,
    DHChain,
    LinkGeometry,
    angular_step,
    as_config,
    interpolate_edge,
    robot_capsule_arrays,
    self_collision_pairs,
    wrap_angle,
    wrapped_diff,
    wrapped_distance,
)
from .risk import RiskEvaluator


class PlanningError(Exception):
    """Base class for rejected planning requests."""


class StartInViolation(PlanningError):
    pass


class GoalInViolation(PlanningError):
    pass


@dataclass(frozen=True)
class PlannerParams:
    goal_bias: float = 0.10
    goal_std: float = 0.5            # rad, per joint
    step: float = 0.15               # rad
    rewire_radius: float = 0.45      # rad
    connect_threshold: float = 0.15  # rad
    max_nodes: int = 2000
    t_max: float = 2.0               # s, wall clock
    edge_resolution: float = 0.05    # rad, max per-joint move between edge checks
    smoothing_iterations: int = 100
    max_iterations: int = 50_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal bias must be a probability")
        for name in ("goal_std", "step", "rewire_radius", "connect_threshold", "t_max", "edge_resolution"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_nodes < 2 or self.max_iterations < 1 or self.smoothing_iterations < 0:
            raise ValueError("node/iteration budgets must be positive")


class Environment:
    """Everything a configuration or edge must be checked against.

    Risk comes from a frozen forecast evaluator (``None`` means no human);
    collision covers self-collision between distant links, a floor
    half-space and an optional horizontal keep-in radius around the base.
    """

    def __init__(
        self,
        chain: DHChain,
        geo: LinkGeometry,
        evaluator: Optional[RiskEvaluator] = None,
        floor_z: Optional[float] = None,
        floor_exempt: tuple[int, ...] = (0,),
        self_collision_gap: int = 3,
        keep_in_radius: Optional[float] = None,
    ):
        self.chain = chain
        self.geo = geo
        self.evaluator = evaluator
        self.floor_z = floor_z
        self.floor_links = np.array([i for i in range(geo.n_links) if i not in floor_exempt], dtype=int)
        pairs = self_collision_pairs(geo, self_collision_gap)
        self._pi = np.array([p[0] for p in pairs], dtype=int)
        self._pj = np.array([p[1] for p in pairs], dtype=int)
        self.keep_in_radius = keep_in_radius
        self.tau = evaluator.tau if evaluator is not None else math.inf

    def with_evaluator(self, evaluator: Optional[RiskEvaluator]) -> "Environment":
        env = object.__new__(Environment)
        env.__dict__.update(self.__dict__)
        env.evaluator = evaluator
        env.tau = evaluator.tau if evaluator is not None else math.inf
        return env

    def risk(self, qs) -> np.ndarray:
        qs = np.atleast_2d(qs)
        if self.evaluator is None:
            return np.zeros(len(qs))
        return self.evaluator.risk(qs)

    def collision_free(self, qs) -> np.ndarray:
        qs = np.atleast_2d(qs)
        a, b, r = robot_capsule_arrays(self.chain, self.geo, qs)
        ok = np.ones(len(qs), bool)
        if len(self._pi):
            d = capsule_distance_v(a[:, self._pi], b[:, self._pi], r[self._pi],
                                   a[:, self._pj], b[:, self._pj], r[self._pj])
            ok &= np.all(d > 0, axis=1)
        if self.floor_z is not None and len(self.floor_links):
            low = np.minimum(a[:, self.floor_links, 2], b[:, self.floor_links, 2]) - r[self.floor_links]
            ok &= np.all(low >= self.floor_z, axis=1)
        if self.keep_in_radius is not None:
            base = self.chain.base[:2, 3]
            ra = np.linalg.norm(a[..., :2] - base, axis=-1) + r
            rb = np.linalg.norm(b[..., :2] - base, axis=-1) + r
            ok &= np.all(np.maximum(ra, rb) <= self.keep_in_radius, axis=1)
        return ok

    def check(self, qs) -> tuple[np.ndarray, np.ndarray]:
        """``(collision_free, U)`` per configuration; U is only computed where collision-free."""
        qs = np.atleast_2d(qs)
        ok = self.collision_free(qs)
        u = np.full(len(qs), np.inf)
        if ok.any():
            u[ok] = self.risk(qs[ok])
        return ok, u

    def valid(self, qs) -> np.ndarray:
        ok, u = self.check(qs)
        return ok & (u < self.tau)

    def edge_ok(self, q_from, u_from: float, q_to, resolution: float) -> tuple[bool, float]:
        """Check the interpolated edge ``q_from -> q_to``; returns (ok, U at ``q_to``).

        From a configuration below threshold every sample must stay below it.
        From one at or above threshold (only possible when escaping an unsafe
        start) risk must strictly decrease sample by sample until it drops
        below threshold, and stay below afterwards.
        """
        pts = interpolate_edge(q_from, q_to, resolution)
        ok, u = self.check(pts)
        if not ok.all():
            return False, math.inf
        return descends(u_from, u, self.tau), float(u[-1])

    def edge_valid(self, q_from, q_to, resolution: float) -> bool:
        return self.edge_ok(q_from, -math.inf, q_to, resolution)[0]


def descends(u_from: float, u, tau: float) -> bool:
    """Risk sequence rule shared by tree edges, shortcuts and escape paths."""
    seq = np.concatenate([[u_from], np.asarray(u, dtype=float)])
    over = seq[:-1] >= tau
    return bool(np.all(np.where(over, seq[1:] < seq[:-1], seq[1:] < tau)))


# ---------------------------------------------------------------------------
# tree
# ---------------------------------------------------------------------------

class Tree:
    def __init__(self, root, capacity: int, root_risk: float = 0.0):
        self.nodes = np.empty((capacity, N_JOINTS))
        self.parent = np.full(capacity, -1, dtype=int)
        self.cost = np.zeros(capacity)
        self.risk = np.zeros(capacity)
        self.children: list[list[int]] = [[] for _ in range(capacity)]
        self.nodes[0] = root
        self.risk[0] = root_risk
        self.size = 1

    @property
    def root(self) -> np.ndarray:
        return self.nodes[0]

    def __len__(self) -> int:
        return self.size

    def add(self, q, parent: int, risk: float = 0.0) -> int:
        i = self.size
        if i >= len(self.nodes):
            raise IndexError("tree capacity exhausted")
        self.nodes[i] = q
        self.parent[i] = parent
        self.risk[i] = risk
        self.cost[i] = self.cost[parent] + wrapped_distance(self.nodes[parent], q)
        self.children[parent].append(i)
        self.size += 1
        return i

    def distances(self, q) -> np.ndarray:
        return wrapped_distance(self.nodes[: self.size], q)

    def reparent(self, i: int, new_parent: int) -> None:
        old = self.parent[i]
        self.children[old].remove(i)
        self.parent[i] = new_parent
        self.children[new_parent].append(i)
        stack = [i]
        while stack:
            n = stack.pop()
            p = self.parent[n]
            self.cost[n] = self.cost[p] + wrapped_distance(self.nodes[p], self.nodes[n])
            stack.extend(self.children[n])

    def path_to_root(self, i: int) -> np.ndarray:
        idx = []
        while i != -1:
            idx.append(i)
            i = self.parent[i]
        return self.nodes[idx].copy()

    def recomputed_costs(self) -> np.ndarray:
        out = np.zeros(self.size)
        for i in range(1, self.size):
            path = self.path_to_root(i)
            out[i] = float(np.sum(wrapped_distance(path[:-1], path[1:])))
        return out


def nearest(tree: Tree, q) -> int:
    """Index of the node closest to ``q`` in the wrapped metric (lowest index on ties)."""
    return int(np.argmin(tree.distances(q)))


def sample(params: PlannerParams, target, rng: np.random.Generator) -> np.ndarray:
    """Gaussian sample around ``target`` with probability ``goal_bias``, else uniform."""
    if rng.random() < params.goal_bias:
        return wrap_angle(np.asarray(target, dtype=float) + rng.normal(0.0, params.goal_std, N_JOINTS))
    return rng.uniform(-math.pi, math.pi, N_JOINTS)


@dataclass(frozen=True)
class ExtendOutcome:
    kind: str                     # "added" | "pruned" | "blocked"
    node: Optional[int] = None

    @property
    def added(self) -> bool:
        return self.kind == "added"


def extend(tree: Tree, q_rand, env: Environment, params: PlannerParams, prune: bool = True) -> ExtendOutcome:
    """One RRT* growth step toward ``q_rand`` with risk pruning and rewiring."""
    if prune and env.evaluator is not None and env.risk(q_rand)[0] >= env.tau:
        return ExtendOutcome("pruned")
    res = params.edge_resolution
    near = nearest(tree, q_rand)
    q_new = angular_step(tree.nodes[near], q_rand, params.step)
    if wrapped_distance(tree.nodes[near], q_new) == 0.0:
        return ExtendOutcome("blocked")
    ok, u_new = env.edge_ok(tree.nodes[near], tree.risk[near], q_new, res)
    if not ok:
        return ExtendOutcome("blocked")

    dist = tree.distances(q_new)
    neighbours = np.flatnonzero(dist <= params.rewire_radius)

    # cheapest valid parent among neighbours
    parent = near
    best = tree.cost[near] + dist[near]
    candidates = sorted(
        (tree.cost[n] + dist[n], int(n)) for n in neighbours if n != near and tree.cost[n] + dist[n] < best
    )
    for c, n in candidates:
        if env.edge_ok(tree.nodes[n], tree.risk[n], q_new, res)[0]:
            parent, best = n, c
            break
    new = tree.add(q_new, parent, u_new)

    for n in neighbours:
        n = int(n)
        if n == parent:
            continue
        if tree.cost[new] + dist[n] < tree.cost[n] - 1e-12:
            if env.edge_ok(q_new, u_new, tree.nodes[n], res)[0]:
                tree.reparent(n, new)
    return ExtendOutcome("added", new)


def connect(tree_a: Tree, tree_b: Tree, new: int, env: Environment, params: PlannerParams,
            node_budget: Optional[int] = None, a_is_start: bool = True) -> Optional[np.ndarray]:
    """Try to join ``tree_a`` node ``new`` to ``tree_b``.

    ``tree_b`` is grown greedily toward ``q_new`` in steps of ``params.step``
    (every step passing the usual edge checks) until its nearest node lies
    within the connect threshold and the joining edge is valid. Returns the
    waypoint path from ``tree_a``'s root to ``tree_b``'s root, or ``None``
    when growth is blocked or the node budget runs out.
    """
    q_new = tree_a.nodes[new]
    budget = params.max_nodes if node_budget is None else node_budget
    while True:
        nb = nearest(tree_b, q_new)
        if wrapped_distance(q_new, tree_b.nodes[nb]) <= params.connect_threshold:
            # check the joining edge in the direction it will be executed
            if a_is_start:
                ok = env.edge_ok(q_new, tree_a.risk[new], tree_b.nodes[nb], params.edge_resolution)[0]
            else:
                ok = env.edge_ok(tree_b.nodes[nb], tree_b.risk[nb], q_new, params.edge_resolution)[0]
            if not ok:
                return None
            break
        if len(tree_a) + len(tree_b) >= budget:
            return None
        if not extend(tree_b, q_new, env, params, prune=False).added:
            return None
    return np.vstack([tree_a.path_to_root(new)[::-1], tree_b.path_to_root(nb)])


def drop_repeats(path) -> np.ndarray:
    """Remove consecutive duplicate waypoints (e.g. where two trees met exactly)."""
    path = np.atleast_2d(path)
    keep = np.concatenate([[True], wrapped_distance(path[:-1], path[1:]) > 0.0])
    return path[keep]


def path_length(path) -> float:
    path = np.atleast_2d(path)
    if len(path) < 2:
        return 0.0
    return float(np.sum(wrapped_distance(path[:-1], path[1:])))


def smooth(path, env: Environment, params: PlannerParams, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Randomized shortcutting; endpoints fixed, length never increases."""
    path = np.array(path, dtype=float)
    rng = np.random.default_rng(params.seed) if rng is None else rng
    u = env.check(path)[1]
    for _ in range(params.smoothing_iterations):
        if len(path) < 3:
            break
        i, j = sorted(rng.choice(len(path), 2, replace=False))
        if j - i < 2:
            continue
        direct = wrapped_distance(path[i], path[j])
        if direct >= path_length(path[i: j + 1]):
            continue
        if env.edge_ok(path[i], u[i], path[j], params.edge_resolution)[0]:
            path = np.vstack([path[: i + 1], path[j:]])
            u = np.concatenate([u[: i + 1], u[j:]])
    return path


def densify(path, max_step: float, resolution: float) -> np.ndarray:
    """Insert edge-check samples so no joint moves more than ``max_step`` between waypoints.

    Inserted configurations are drawn from the same interpolation used by
    :meth:`Environment.edge_ok`, so each one was checked during planning.
    """
    path = np.atleast_2d(path)
    out = [path[0]]
    for q1, q2 in zip(path[:-1], path[1:]):
        pts = interpolate_edge(q1, q2, resolution)
        piece = float(np.max(np.abs(wrapped_diff(q1, q2)))) / len(pts)
        stride = max(1, int(math.floor(max_step / piece + 1e-9))) if piece > 0 else len(pts)
        picks = list(range(stride - 1, len(pts) - 1, stride)) + [len(pts) - 1]
        out.extend(pts[picks])
    return np.array(out)


@dataclass
class PlanResult:
    status: str                    # "success" | "timeout"
    path: np.ndarray
    nodes_explored: int
    nodes_used: int
    wall_time: float
    iterations: int = 0
    reason: str = ""
    raw_path: Optional[np.ndarray] = field(default=None, repr=False)
    smoothed: Optional[np.ndarray] = field(default=None, repr=False)
    start_risk: float = 0.0

    @property
    def success(self) -> bool:
        return self.status == "success"


def plan(q_s, q_g, env: Environment, params: PlannerParams = PlannerParams(),
         allow_unsafe_start: bool = False) -> PlanResult:
    """Plan from ``q_s`` to ``q_g`` against a frozen environment.

    Raises :class:`StartInViolation` / :class:`GoalInViolation` when an
    endpoint collides or its risk is at or above threshold. With
    ``allow_unsafe_start`` a start whose only fault is risk is accepted and
    the path leaves it along strictly decreasing risk (see
    :meth:`Environment.edge_ok`). Deterministic for a fixed seed as long as
    the wall-clock cap is not the binding limit.
    """
    t0 = time.perf_counter()
    q_s = as_config(q_s)
    q_g = as_config(q_g)
    ok, u = env.check(np.vstack([q_s, q_g]))
    if not ok[0] or (u[0] >= env.tau and not allow_unsafe_start):
        raise StartInViolation("start configuration violates risk or collision constraints")
    if not ok[1] or u[1] >= env.tau:
        raise GoalInViolation("goal configuration violates risk or collision constraints")
    u_s = float(u[0])
    if wrapped_distance(q_s, q_g) == 0.0:
        if u_s >= env.tau:
            raise GoalInViolation("goal configuration violates risk or collision constraints")
        single = q_s[None, :].copy()
        return PlanResult("success", single, 1, 1, time.perf_counter() - t0,
                          raw_path=single, smoothed=single, start_risk=u_s)

    rng = np.random.default_rng(params.seed)
    cap = params.max_nodes + 1
    t_start, t_goal = Tree(q_s, cap, u_s), Tree(q_g, cap, float(u[1]))
    a, b = t_start, t_goal
    raw = None
    it = 0
    reason = ""
    while True:
        if time.perf_counter() - t0 >= params.t_max:
            reason = "time cap"
            break
        if len(t_start) + len(t_goal) >= params.max_nodes:
            reason = "node cap"
            break
        if it >= params.max_iterations:
            reason = "iteration cap"
            break
        it += 1
        q_rand = sample(params, b.root, rng)
        out = extend(a, q_rand, env, params)
        if out.added:
            joined = connect(a, b, out.node, env, params, a_is_start=a is t_start)
            if joined is not None:
                raw = joined if a is t_start else joined[::-1].copy()
                break
        a, b = b, a

    explored = len(t_start) + len(t_goal)
    if raw is None:
        return PlanResult("timeout", np.zeros((0, N_JOINTS)), explored, 0, time.perf_counter() - t0, it, reason,
                          start_risk=u_s)
    raw = drop_repeats(raw)
    raw[0], raw[-1] = q_s, q_g
    smoothed = smooth(raw, env, params, rng)
    path = densify(smoothed, params.step, params.edge_resolution)
    return PlanResult("success", path, explored, len(raw), time.perf_counter() - t0, it,
                      raw_path=raw, smoothed=smoothed, start_risk=u_s)
