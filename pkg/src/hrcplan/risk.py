"""Capsule artificial-potential-field risk over present and forecast poses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import capsule_distance_v, point_segment_distance_v
from .kinematics import DHChain, LinkGeometry, robot_capsule_arrays
from .perception import HumanGeometry, skeleton_capsule_arrays
from .prediction import PoseForecast


@dataclass(frozen=True)
class APFParams:
    d_th: float = 0.5        # influence radius, m
    tau: float = 20.0        # trigger threshold
    weight_decay: float = 0.9

    def __post_init__(self):
        if not self.d_th > 0:
            raise ValueError("influence radius d_th must be positive")
        if not self.tau > 0:
            raise ValueError("threshold tau must be positive")
        if not 0 < self.weight_decay <= 1:
            raise ValueError("weight decay must lie in (0, 1]")


def phi(d, d_th: float):
    """Piecewise potential: 2 inside penetration, cosine ramp to 0 at ``d_th``."""
    d = np.asarray(d, dtype=float)
    ramp = np.cos(np.pi * d / (2.0 * d_th))
    out = np.where(d < 0, 2.0, np.where(d <= d_th, ramp, 0.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Trigger:
    link: int
    bone: int
    step: int


@dataclass(frozen=True)
class RiskReport:
    U: float
    partials: np.ndarray          # per horizon step
    min_clearance: float          # m; inf when nothing is observed
    trigger: Optional[Trigger]    # largest single contribution, None if U == 0
    unobserved: bool = False


class HumanField:
    """Forecast human capsules flattened in (step, bone) order.

    Precomputing this once per forecast keeps per-configuration risk
    evaluation a handful of array operations.
    """

    def __init__(self, forecast: PoseForecast, human_geo: HumanGeometry = HumanGeometry()):
        a_parts, b_parts, r_parts, step_parts, bone_parts = [], [], [], [], []
        for i, sk in enumerate(forecast.steps):
            a, b, r, bones = skeleton_capsule_arrays(sk, human_geo)
            a_parts.append(a)
            b_parts.append(b)
            r_parts.append(r)
            step_parts.append(np.full(len(r), i))
            bone_parts.append(bones)
        self.forecast = forecast
        self.n_steps_total = len(forecast.steps)
        self.a = np.concatenate(a_parts) if a_parts else np.zeros((0, 3))
        self.b = np.concatenate(b_parts) if b_parts else np.zeros((0, 3))
        self.r = np.concatenate(r_parts) if r_parts else np.zeros(0)
        self.step = np.concatenate(step_parts).astype(int) if step_parts else np.zeros(0, int)
        self.bone = np.concatenate(bone_parts).astype(int) if bone_parts else np.zeros(0, int)
        self.weight = forecast.weights[self.step]

    @property
    def n_capsules(self) -> int:
        return len(self.r)

    @property
    def empty(self) -> bool:
        return self.n_capsules == 0

    def step_capsules(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.step == i)


class RiskEvaluator:
    """Batched risk and clearance for one robot against one frozen forecast.

    Terms are accumulated sequentially in (step, robot link, human bone)
    order so every caller, batched or not, sees identical floats.
    """

    def __init__(self, chain: DHChain, geo: LinkGeometry, field: HumanField, params: APFParams):
        self.chain = chain
        self.geo = geo
        self.field = field
        self.params = params
        n_links = geo.n_links
        order_j, order_k = [], []
        for i in range(field.n_steps_total):
            ks = field.step_capsules(i)
            for j in range(n_links):
                order_j.extend([j] * len(ks))
                order_k.extend(ks.tolist())
        self._oj = np.array(order_j, dtype=int)
        self._ok = np.array(order_k, dtype=int)
        self._ostep = field.step[self._ok] if len(self._ok) else np.zeros(0, int)

    @property
    def tau(self) -> float:
        return self.params.tau

    def distances(self, qs) -> np.ndarray:
        """Signed distances (M, links, human capsules)."""
        qs = np.atleast_2d(qs)
        ra, rb, rr = robot_capsule_arrays(self.chain, self.geo, qs)
        f = self.field
        return capsule_distance_v(
            ra[:, :, None, :], rb[:, :, None, :], rr[None, :, None],
            f.a[None, None, :, :], f.b[None, None, :, :], f.r[None, None, :],
        )

    def _terms(self, d: np.ndarray) -> np.ndarray:
        # (M, P) weighted potentials in accumulation order
        dd = d[:, self._oj, self._ok]
        return self.field.weight[self._ok][None, :] * phi(dd, self.params.d_th)

    @staticmethod
    def _accumulate(terms: np.ndarray) -> np.ndarray:
        if terms.shape[1] == 0:
            return np.zeros(terms.shape[0])
        return np.cumsum(terms, axis=1)[:, -1]

    def risk(self, qs) -> np.ndarray:
        """U for each configuration in ``qs`` (M, 6)."""
        qs = np.atleast_2d(qs)
        if self.field.empty:
            return np.zeros(len(qs))
        return self._accumulate(self._terms(self.distances(qs)))

    def risk_from_step(self, qs, first_steps) -> np.ndarray:
        """U restricted to horizon steps ``>= first_steps[m]`` for each config."""
        qs = np.atleast_2d(qs)
        if self.field.empty:
            return np.zeros(len(qs))
        terms = self._terms(self.distances(qs))
        keep = self._ostep[None, :] >= np.asarray(first_steps)[:, None]
        return self._accumulate(np.where(keep, terms, 0.0))

    def min_clearance(self, qs) -> np.ndarray:
        qs = np.atleast_2d(qs)
        if self.field.empty:
            return np.full(len(qs), np.inf)
        return self.distances(qs).min(axis=(1, 2))

    def report(self, q, first_step: int = 0) -> RiskReport:
        q = np.asarray(q, dtype=float)
        n_total = self.field.n_steps_total
        if self.field.empty:
            return RiskReport(0.0, np.zeros(n_total), math.inf, None, unobserved=True)
        d = self.distances(q[None, :])
        terms = self._terms(d)
        keep = self._ostep >= first_step
        terms = np.where(keep[None, :], terms, 0.0)
        U = float(self._accumulate(terms)[0])
        partials = np.zeros(n_total)
        np.add.at(partials, self._ostep, terms[0])
        kept = self.field.step >= first_step
        dmin = float(d[0][:, kept].min()) if kept.any() else math.inf
        trigger = None
        if U > 0:
            p = int(np.argmax(terms[0]))
            k = self._ok[p]
            trigger = Trigger(int(self._oj[p]), int(self.field.bone[k]), int(self.field.step[k]))
        return RiskReport(U, partials, dmin, trigger, unobserved=False)


def config_risk(
    q,
    forecast: PoseForecast,
    chain: DHChain,
    geo: LinkGeometry,
    params: APFParams = APFParams(),
    human_geo: HumanGeometry = HumanGeometry(),
) -> RiskReport:
    """Summed weighted potential of configuration ``q`` against every forecast step."""
    ev = RiskEvaluator(chain, geo, HumanField(forecast, human_geo), params)
    return ev.report(q)


def exceeds_threshold(report: RiskReport, tau: float) -> bool:
    return report.U > tau


def nearest_steps(times, forecast: PoseForecast, horizon: Optional[float] = None) -> np.ndarray:
    """Forecast step nearest in time for each timestamp.

    Times past ``horizon`` seconds after the first forecast step map to the
    final step.
    """
    times = np.asarray(times, dtype=float)
    t0 = float(forecast.times[0])
    n = forecast.n_steps
    span = float(forecast.times[-1] - t0) if horizon is None else horizon
    idx = np.abs(times[:, None] - forecast.times[None, :]).argmin(axis=1)
    return np.where(times - t0 > span + 1e-12, n, idx)


@dataclass(frozen=True)
class TrajectoryRisk:
    reports: list[RiskReport]
    steps: np.ndarray     # first forecast step used per waypoint
    worst: int            # index of the max-U waypoint

    @property
    def max_U(self) -> float:
        return self.reports[self.worst].U

    @property
    def values(self) -> np.ndarray:
        return np.array([r.U for r in self.reports])


def trajectory_risk_eval(ev: RiskEvaluator, path, times, horizon: Optional[float] = None) -> TrajectoryRisk:
    """Rescore timed waypoints against an evaluator's forecast.

    A waypoint reached at time ``t`` is scored against the forecast from the
    step nearest ``t`` onward: it cannot meet the human at earlier
    instants. Waypoints beyond the horizon see the final step only.
    """
    path = np.atleast_2d(np.asarray(path, dtype=float))
    times = np.asarray(times, dtype=float)
    if len(path) == 0:
        raise ValueError("empty path")
    if times.shape != (len(path),):
        raise ValueError("need one timestamp per waypoint")
    if np.any(np.diff(times) <= 0):
        raise ValueError("path timestamps must be strictly increasing")
    steps = nearest_steps(times, ev.field.forecast, horizon)
    reports = [ev.report(q, int(s)) for q, s in zip(path, steps)]
    worst = int(np.argmax([r.U for r in reports]))
    return TrajectoryRisk(reports, steps, worst)


def trajectory_risk(
    path,
    times,
    forecast: PoseForecast,
    chain: DHChain,
    geo: LinkGeometry,
    params: APFParams = APFParams(),
    horizon: Optional[float] = None,
    human_geo: HumanGeometry = HumanGeometry(),
) -> TrajectoryRisk:
    ev = RiskEvaluator(chain, geo, HumanField(forecast, human_geo), params)
    return trajectory_risk_eval(ev, path, times, horizon)


def sampled_min_clearance(q, forecast: PoseForecast, chain: DHChain, geo: LinkGeometry,
                          human_geo: HumanGeometry = HumanGeometry(), spacing: float = 0.05) -> float:
    """Clearance from robot axis sample points to human capsules.

    Cross-check for the capsule-capsule path: as ``spacing`` shrinks the
    result converges to :meth:`RiskEvaluator.min_clearance` from above.
    """
    field = HumanField(forecast, human_geo)
    if field.empty:
        return math.inf
    ra, rb, rr = robot_capsule_arrays(chain, geo, np.asarray(q, dtype=float)[None, :])
    best = math.inf
    for j in range(geo.n_links):
        length = float(np.linalg.norm(rb[0, j] - ra[0, j]))
        n = max(2, int(math.ceil(length / spacing)) + 1)
        ts = np.linspace(0.0, 1.0, n)[:, None]
        pts = ra[0, j] + ts * (rb[0, j] - ra[0, j])
        d = point_segment_distance_v(pts[:, None, :], field.a[None], field.b[None]) - field.r[None] - rr[j]
        best = min(best, float(d.min()))
    return best
