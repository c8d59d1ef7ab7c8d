"""Scripted human motion for the benchmark scenarios."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..config import OcclusionWindow, SimConfig
from ..perception import PoseFrame, Skeleton, read_pose_file, standing_skeleton

_EPS = 1e-9


@dataclass(frozen=True)
class Scenario:
    """A fully resolved human script for one trial.

    Times run from ``-lead`` (observation pre-roll) to ``duration``. For the
    walking scenarios the root follows ``origin + t * velocity``.
    """

    id: str
    duration: float
    lead: float
    height: float = 1.75
    origin: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0
    occlusions: tuple[OcclusionWindow, ...] = ()
    frames: Optional[tuple[PoseFrame, ...]] = None

    def root_xy(self, t: float) -> np.ndarray:
        return np.asarray(self.origin) + t * np.asarray(self.velocity)

    def occluded_joints(self, t: float) -> tuple[str, ...]:
        names: list[str] = []
        for w in self.occlusions:
            if w.start <= t < w.end:
                names.extend(j for j in w.joints if j not in names)
        return tuple(names)


def make_scenario(cfg: SimConfig, seed: int) -> Scenario:
    """Resolve the configured scenario, applying the per-seed jitter."""
    sc = cfg.scenario
    lead = (cfg.sim.window_frames - 1) * cfg.sim.dt
    rng = np.random.default_rng([seed, 11])
    phase = rng.uniform(-sc.phase_jitter, sc.phase_jitter) if sc.phase_jitter > 0 else 0.0
    lateral = rng.uniform(-sc.lateral_jitter, sc.lateral_jitter) if sc.lateral_jitter > 0 else 0.0
    common = dict(duration=cfg.sim.duration, lead=lead, height=sc.human_height, occlusions=sc.occlusions)
    if sc.id == "S1":
        jx, jy = rng.uniform(-sc.lateral_jitter, sc.lateral_jitter, 2) if sc.lateral_jitter > 0 else (0.0, 0.0)
        return Scenario("S1", origin=(sc.stand_xy[0] + jx, sc.stand_xy[1] + jy), heading=sc.stand_heading, **common)
    if sc.id in ("S2", "S3"):
        x = sc.walk_line_x + lateral
        y0 = sc.walk_start_y + sc.walk_speed * phase
        return Scenario(sc.id, origin=(x, y0), velocity=(0.0, sc.walk_speed), heading=math.pi / 2, **common)
    frames = tuple(read_pose_file(sc.recording))
    return Scenario("custom", frames=frames, **common)


def scripted_pose(scenario: Scenario, t: float) -> Skeleton:
    """Ground-truth skeleton at time ``t`` with the occlusion flags applied."""
    if not (-scenario.lead - _EPS <= t <= scenario.duration + _EPS):
        raise ValueError(f"t = {t} outside the scripted interval [{-scenario.lead}, {scenario.duration}]")
    if scenario.frames is not None:
        times = [f.t for f in scenario.frames]
        i = bisect.bisect_right(times, t + _EPS) - 1
        if i < 0:
            raise ValueError(f"no recorded frame at or before t = {t}")
        sk = scenario.frames[i].skeleton
    else:
        x, y = scenario.root_xy(t)
        sk = standing_skeleton((x, y, 0.0), scenario.heading, scenario.height)
    hidden = scenario.occluded_joints(t)
    return sk.with_invalid(hidden) if hidden else sk
