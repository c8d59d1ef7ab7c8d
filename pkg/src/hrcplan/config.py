"""Scenario/run configuration: YAML schema, defaults and validation."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .kinematics import ChainConfigError, DHChain, LinkGeometry, load_chain
from .perception import JOINT_INDEX, HumanGeometry
from .planner import PlannerParams
from .risk import APFParams

SCENARIO_IDS = ("S1", "S2", "S3", "custom")


class ConfigError(ValueError):
    """Invalid configuration content; ``issues`` lists every violation found."""

    def __init__(self, issues: list[str]):
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


@dataclass(frozen=True)
class OcclusionWindow:
    start: float
    end: float
    joints: tuple[str, ...]


@dataclass(frozen=True)
class ScenarioConfig:
    id: str = "S2"
    human_height: float = 1.75
    # S1: standing position (x, y) on the floor and facing direction
    stand_xy: tuple[float, float] = (-1.3, 1.3)
    stand_heading: float = -0.785
    # S2/S3: straight walk parallel to +y at x = walk_line_x
    walk_speed: float = 0.8
    walk_line_x: float = 1.2
    walk_start_y: float = -3.5
    # per-seed jitter (uniform half-widths)
    phase_jitter: float = 0.5
    lateral_jitter: float = 0.03
    observation_noise: float = 0.003
    occlusions: tuple[OcclusionWindow, ...] = ()
    recording: Optional[str] = None


@dataclass(frozen=True)
class RobotTask:
    chain: str = "ur16e"
    q_start: tuple[float, ...] = ()
    q_goal: tuple[float, ...] = ()
    legs: int = 4
    joint_speed: float = 1.0           # rad/s, per-joint cap
    floor_z: Optional[float] = 0.8     # m, table plane under the arm
    keep_in_radius: Optional[float] = None
    self_collision_gap: int = 3


@dataclass(frozen=True)
class SimSettings:
    dt: float = 0.1
    duration: float = 120.0
    window_frames: int = 30
    horizon_steps: int = 10
    workspace_radius: float = 2.5      # m; beyond this a vanished human is ignored


@dataclass(frozen=True)
class SimConfig:
    scenario: ScenarioConfig
    robot: RobotTask
    apf: APFParams
    human: HumanGeometry
    planner: PlannerParams
    sim: SimSettings
    trials: int = 20
    seeds: tuple[int, ...] = ()
    chain: Optional[DHChain] = field(default=None, compare=False, repr=False)
    link_geometry: Optional[LinkGeometry] = field(default=None, compare=False, repr=False)

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds else list(range(self.trials))

    def with_scenario(self, scenario_id: str) -> "SimConfig":
        """Same settings with another scenario id; occlusions follow the preset."""
        if scenario_id == self.scenario.id:
            return self
        issues: list[str] = []
        occ = _occlusions(preset(scenario_id).get("occlusions"), issues)
        sc = replace(self.scenario, id=scenario_id, occlusions=occ)
        issues.extend(_scenario_issues(sc, self.sim))
        if issues:
            raise ConfigError(issues)
        return replace(self, scenario=sc)


# defaults for each scenario family; file values override these
_PRESETS: dict[str, dict[str, Any]] = {
    "S1": {"id": "S1"},
    "S2": {"id": "S2"},
    "S3": {
        "id": "S3",
        "occlusions": [
            {"start": 2.0, "end": 6.0, "joints": ["LSHO", "LAEL", "LWPS"]},
            {"start": 2.6, "end": 3.2, "joints": "all"},
        ],
    },
    "custom": {"id": "custom"},
}


def preset(scenario_id: str) -> dict:
    if scenario_id not in _PRESETS:
        raise ConfigError([f"unknown scenario id {scenario_id!r}; expected one of {SCENARIO_IDS}"])
    return copy.deepcopy(_PRESETS[scenario_id])


DEFAULT_Q_START = (2.0, -1.0, 1.7, -2.27, -1.5708, 0.0)
DEFAULT_Q_GOAL = (-2.0, -1.0, 1.7, -2.27, -1.5708, 0.0)


def _section(data: dict, name: str, issues: list[str]) -> dict:
    sec = data.get(name, {}) or {}
    if not isinstance(sec, dict):
        issues.append(f"section {name!r} must be a mapping")
        return {}
    return sec


def _build(cls, values: dict, name: str, issues: list[str], **extra):
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(values) - known)
    if unknown:
        issues.append(f"{name}: unknown keys {unknown}")
    kwargs = {k: v for k, v in values.items() if k in known}
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        issues.append(f"{name}: {exc}")
        return None


def _occlusions(raw, issues: list[str]) -> tuple[OcclusionWindow, ...]:
    out = []
    for i, w in enumerate(raw or []):
        try:
            joints = w["joints"]
            if joints == "all":
                joints = tuple(JOINT_INDEX)
            joints = tuple(str(j) for j in joints)
            bad = [j for j in joints if j not in JOINT_INDEX]
            if bad:
                issues.append(f"scenario.occlusions[{i}]: unknown joints {bad}")
            start, end = float(w["start"]), float(w["end"])
            if not end > start:
                issues.append(f"scenario.occlusions[{i}]: end must be after start")
            out.append(OcclusionWindow(start, end, joints))
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(f"scenario.occlusions[{i}]: {exc}")
    return tuple(out)


def from_dict(data: dict, base_dir: Optional[Path] = None,
              chain: Optional[tuple[Optional[DHChain], Optional[LinkGeometry]]] = None) -> SimConfig:
    """Build and validate a :class:`SimConfig`; raises :class:`ConfigError`."""
    issues: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["config root must be a mapping"])
    unknown = sorted(set(data) - {"scenario", "robot", "apf", "human", "planner", "sim", "trials", "seeds"})
    if unknown:
        issues.append(f"unknown top-level keys {unknown}")

    scen_raw = _section(data, "scenario", issues)
    sid = scen_raw.get("id", "S2")
    if sid not in SCENARIO_IDS:
        issues.append(f"scenario.id must be one of {SCENARIO_IDS}, got {sid!r}")
        sid = "custom"
    merged = {**preset(sid), **scen_raw}
    merged["occlusions"] = _occlusions(merged.get("occlusions"), issues)
    for key in ("stand_xy",):
        if key in merged:
            merged[key] = tuple(float(v) for v in merged[key])
    if merged.get("recording") and base_dir is not None:
        rec = Path(merged["recording"])
        merged["recording"] = str(rec if rec.is_absolute() else base_dir / rec)
    scenario = _build(ScenarioConfig, merged, "scenario", issues)

    robot_raw = dict(_section(data, "robot", issues))
    robot_raw.setdefault("q_start", DEFAULT_Q_START)
    robot_raw.setdefault("q_goal", DEFAULT_Q_GOAL)
    for key in ("q_start", "q_goal"):
        try:
            robot_raw[key] = tuple(float(v) for v in robot_raw[key])
        except (TypeError, ValueError):
            issues.append(f"robot.{key} must be a list of 6 numbers")
    robot = _build(RobotTask, robot_raw, "robot", issues)

    apf = _build(APFParams, _section(data, "apf", issues), "apf", issues)
    human = _build(HumanGeometry, _section(data, "human", issues), "human", issues)
    planner = _build(PlannerParams, _section(data, "planner", issues), "planner", issues)
    sim = _build(SimSettings, _section(data, "sim", issues), "sim", issues)

    trials = data.get("trials", 20)
    seeds = data.get("seeds") or []
    if not isinstance(trials, int) or trials < 1:
        issues.append("trials must be a positive integer")
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        issues.append("seeds must be a list of integers")
        seeds = []

    ch = geo = None
    if chain is not None and chain[0] is not None:
        ch, geo = chain
    elif robot is not None:
        try:
            ref = robot.chain
            if ref != "ur16e" and base_dir is not None and not Path(ref).is_absolute():
                ref = str(base_dir / ref)
            ch, geo = load_chain(ref)
        except FileNotFoundError:
            issues.append(f"robot.chain: file not found: {robot.chain}")
        except ChainConfigError as exc:
            issues.append(f"robot.chain: {exc}")

    if robot is not None:
        issues.extend(_robot_issues(robot))
    if sim is not None:
        issues.extend(_sim_issues(sim))
    if scenario is not None:
        issues.extend(_scenario_issues(scenario, sim))

    if issues:
        raise ConfigError(issues)
    return SimConfig(scenario, robot, apf, human, planner, sim, trials, tuple(seeds), ch, geo)


def _robot_issues(r: RobotTask) -> list[str]:
    out = []
    for key in ("q_start", "q_goal"):
        q = getattr(r, key)
        if len(q) != 6 or not all(math.isfinite(v) for v in q):
            out.append(f"robot.{key} must hold 6 finite joint angles")
    if r.legs < 0:
        out.append("robot.legs must be >= 0")
    if not r.joint_speed > 0:
        out.append("robot.joint_speed must be positive")
    if r.keep_in_radius is not None and not r.keep_in_radius > 0:
        out.append("robot.keep_in_radius must be positive")
    return out


def _sim_issues(s: SimSettings) -> list[str]:
    out = []
    if not s.dt > 0:
        out.append("sim.dt must be positive")
    if not s.duration > 0:
        out.append("sim.duration must be positive")
    if s.window_frames < 2:
        out.append("sim.window_frames must be at least 2")
    if s.horizon_steps < 1:
        out.append("sim.horizon_steps must be at least 1")
    return out


def _scenario_issues(sc: ScenarioConfig, sim: Optional[SimSettings]) -> list[str]:
    out = []
    if not sc.human_height > 0:
        out.append("scenario.human_height must be positive")
    if sc.id in ("S2", "S3") and not sc.walk_speed >= 0:
        out.append("scenario.walk_speed must be non-negative")
    if sc.observation_noise < 0:
        out.append("scenario.observation_noise must be non-negative")
    if sc.id == "custom":
        if not sc.recording:
            out.append("scenario.recording is required for custom scenarios")
        elif sim is not None:
            out.extend(_recording_issues(sc.recording, sim))
    return out


def _recording_issues(path: str, sim: SimSettings) -> list[str]:
    from .perception import read_pose_file

    try:
        frames = read_pose_file(path)
    except FileNotFoundError:
        return [f"scenario.recording: file not found: {path}"]
    except ValueError as exc:
        return [f"scenario.recording: {exc}"]
    if not frames:
        return ["scenario.recording: no frames"]
    lead = (sim.window_frames - 1) * sim.dt
    if frames[0].t > -lead + 1e-9 or frames[-1].t < sim.duration - 1e-9:
        return [
            f"scenario.recording: script must cover [{-lead:.2f}, {sim.duration:.2f}] s "
            f"(observation pre-roll plus trial duration); file covers [{frames[0].t:.2f}, {frames[-1].t:.2f}] s"
        ]
    return []


def default_config_text() -> str:
    return resources.files("hrcplan.data").joinpath("default.yaml").read_text()


def load_config(path: str | Path | None = None) -> SimConfig:
    """Parse a YAML config file (``None`` loads the bundled default)."""
    if path is None:
        text, base = default_config_text(), None
    else:
        p = Path(path)
        text, base = p.read_text(), p.parent
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"not valid YAML: {exc}"]) from exc
    return from_dict(data if data is not None else {}, base)


def apply_overrides(cfg: SimConfig, tau=None, d_th=None, walk_speed=None, trials=None, seeds=None) -> SimConfig:
    issues = []
    apf, scenario = cfg.apf, cfg.scenario
    try:
        if tau is not None or d_th is not None:
            apf = replace(apf, tau=apf.tau if tau is None else float(tau),
                          d_th=apf.d_th if d_th is None else float(d_th))
    except ValueError as exc:
        issues.append(f"override: {exc}")
    if walk_speed is not None:
        if not float(walk_speed) >= 0:
            issues.append("override: walk speed must be non-negative")
        scenario = replace(scenario, walk_speed=float(walk_speed))
    if trials is not None and trials < 1:
        issues.append("override: trials must be positive")
    if issues:
        raise ConfigError(issues)
    return replace(
        cfg,
        apf=apf,
        scenario=scenario,
        trials=cfg.trials if trials is None else int(trials),
        seeds=cfg.seeds if seeds is None else tuple(seeds),
    )
