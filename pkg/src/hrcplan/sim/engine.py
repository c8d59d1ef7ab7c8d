"""10 Hz closed-loop trial engine: observe, forecast, rescore, hold/replan, advance."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..config import SimConfig
from ..geometry import capsule_distance_v
from ..kinematics import DHChain, LinkGeometry, robot_capsule_arrays, wrapped_distance
from ..perception import HumanGeometry, Skeleton, skeleton_capsule_arrays
from ..planner import Environment, PlanningError, densify, descends, plan
from ..prediction import ConstantVelocityForecaster, Forecaster, PoseHistory, horizon_weights
from ..risk import HumanField, RiskEvaluator, trajectory_risk_eval
from .scenario import Scenario, make_scenario, scripted_pose

EXECUTING, HOLDING = "executing", "holding"


@dataclass
class Modules:
    chain: DHChain
    geo: LinkGeometry
    human_geo: HumanGeometry
    env: Environment
    forecaster: Forecaster


def build_modules(cfg: SimConfig, forecaster: Optional[Forecaster] = None) -> Modules:
    r = cfg.robot
    env = Environment(cfg.chain, cfg.link_geometry, floor_z=r.floor_z,
                      self_collision_gap=r.self_collision_gap, keep_in_radius=r.keep_in_radius)
    if forecaster is None:
        w = horizon_weights(cfg.sim.horizon_steps, cfg.apf.weight_decay)
        forecaster = ConstantVelocityForecaster(cfg.sim.dt, w, fill="body")
    return Modules(cfg.chain, cfg.link_geometry, cfg.human, env, forecaster)


def true_clearance(chain: DHChain, geo: LinkGeometry, q, sk: Skeleton, human_geo: HumanGeometry) -> float:
    """Ground-truth robot-human capsule distance (every joint counts, flags ignored)."""
    full = Skeleton(sk.positions)
    ha, hb, hr, _ = skeleton_capsule_arrays(full, human_geo)
    ra, rb, rr = robot_capsule_arrays(chain, geo, np.asarray(q, dtype=float)[None, :])
    d = capsule_distance_v(ra[0][:, None], rb[0][:, None], rr[:, None], ha[None], hb[None], hr[None])
    return float(d.min())


@dataclass
class ReplanEvent:
    attempt: int
    status: str            # success | timeout | blocked
    wall_time_s: float
    nodes_explored: int
    nodes_used: int
    escape: bool
    reason: str = ""

    def record(self) -> dict:
        return {
            "attempt": self.attempt, "status": self.status, "wall_time_s": self.wall_time_s,
            "nodes_explored": self.nodes_explored, "nodes_used": self.nodes_used,
            "escape": self.escape, "reason": self.reason,
        }


@dataclass
class SimState:
    tick: int
    q: np.ndarray
    path: np.ndarray
    index: int
    leg: int
    targets: list[np.ndarray]
    history: PoseHistory
    mode: str = EXECUTING
    escape_path: bool = False
    last_seen_xy: Optional[np.ndarray] = None
    episode_open: bool = False
    triggers: int = 0
    attempts: int = 0
    events: list[ReplanEvent] = field(default_factory=list)
    hold_ticks: int = 0
    occlusion_hold_ticks: int = 0
    first_trigger_tick: Optional[int] = None

    @property
    def complete(self) -> bool:
        return self.leg >= len(self.targets)


@dataclass
class TrialMetrics:
    scenario: str
    seed: int
    task_completed: bool
    ticks: int
    sim_time_s: float
    min_clearance_mm: float
    replans_triggered: int
    plan_attempts: int
    plan_successes: int
    plan_timeouts: int
    plan_blocked: int
    plan_time_median_s: float
    plan_time_max_s: float
    tick_time_p95_ms: float
    nodes_explored_mean: float
    nodes_used_mean: float
    hold_time_s: float
    occlusion_hold_s: float
    intrusion: bool
    covered: bool
    first_trigger_tick: int
    would_violate_tick: int
    first_violation_tick: int
    plan_times_s: list[float] = field(default_factory=list, repr=False)

    CSV_FIELDS = (
        "scenario", "seed", "task_completed", "ticks", "sim_time_s", "min_clearance_mm",
        "replans_triggered", "plan_attempts", "plan_successes", "plan_timeouts", "plan_blocked",
        "plan_time_median_s", "plan_time_max_s", "tick_time_p95_ms", "nodes_explored_mean", "nodes_used_mean",
        "hold_time_s", "occlusion_hold_s", "intrusion", "covered",
        "first_trigger_tick", "would_violate_tick", "first_violation_tick",
    )

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


@dataclass
class TrialResult:
    metrics: TrialMetrics
    trace: list[dict]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def leg_targets(cfg: SimConfig) -> list[np.ndarray]:
    qs, qg = np.array(cfg.robot.q_start), np.array(cfg.robot.q_goal)
    if wrapped_distance(qs, qg) == 0.0:
        return []
    return [qg if i % 2 == 0 else qs for i in range(cfg.robot.legs)]


def timed_path(nodes, cfg: SimConfig) -> np.ndarray:
    """One waypoint per tick at the joint speed cap, sampled on the edge-check grid."""
    step = cfg.robot.joint_speed * cfg.sim.dt
    return densify(nodes, step, min(step, cfg.planner.edge_resolution))


def nominal_leg(q, target, cfg: SimConfig, env: Environment) -> np.ndarray:
    path = timed_path(np.vstack([q, target]), cfg)
    if env.collision_free(path).all():
        return path
    res = plan(q, target, env, cfg.planner)
    if not res.success:
        raise RuntimeError(f"no collision-free nominal path between task configurations ({res.reason})")
    return timed_path(res.smoothed, cfg)


def nominal_schedule(cfg: SimConfig, env: Environment) -> np.ndarray:
    """Configuration per tick if the robot never reacted to the human."""
    q = np.array(cfg.robot.q_start)
    out = [q]
    for target in leg_targets(cfg):
        leg = nominal_leg(q, target, cfg, env)
        out.extend(leg[1:])
        q = leg[-1]
    return np.array(out)


def observe(truth: Skeleton, sigma: float, rng: np.random.Generator) -> Skeleton:
    noise = rng.normal(0.0, sigma, truth.positions.shape) if sigma > 0 else 0.0
    pos = np.where(truth.valid[:, None], truth.positions + noise, 0.0)
    return Skeleton(pos, truth.valid.copy())


def _attempt_seed(seed: int, attempt: int) -> int:
    return int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])


def _acceptable(ev: RiskEvaluator, prefix: np.ndarray, values: np.ndarray, escape: bool, tau: float) -> bool:
    if np.all(values <= tau):
        return True
    if not escape:
        return False
    u = ev.risk(prefix)
    return descends(u[0], u[1:], tau)


# ---------------------------------------------------------------------------
# tick
# ---------------------------------------------------------------------------

def init_state(cfg: SimConfig, scenario: Scenario, modules: Modules, rng: np.random.Generator) -> SimState:
    dt = cfg.sim.dt
    hist = PoseHistory(cfg.sim.window_frames)
    last_seen = None
    for k in range(cfg.sim.window_frames - 1, 0, -1):
        t = -k * dt
        obs = observe(scripted_pose(scenario, t), cfg.scenario.observation_noise, rng)
        hist.push(t, obs)
        if obs.valid.any():
            last_seen = obs.positions[obs.valid].mean(axis=0)[:2]
    q = np.array(cfg.robot.q_start)
    targets = leg_targets(cfg)
    path = nominal_leg(q, targets[0], cfg, modules.env) if targets else q[None, :]
    return SimState(0, q, path, 0, 0, targets, hist, last_seen_xy=last_seen)


def _replan(state: SimState, cfg: SimConfig, modules: Modules, ev: RiskEvaluator, seed: int) -> ReplanEvent:
    state.attempts += 1
    params = replace(cfg.planner, seed=_attempt_seed(seed, state.attempts))
    env = modules.env.with_evaluator(ev)
    target = state.targets[state.leg]
    t0 = time.perf_counter()
    try:
        res = plan(state.q, target, env, params, allow_unsafe_start=True)
    except PlanningError as exc:
        return ReplanEvent(state.attempts, "blocked", time.perf_counter() - t0, 0, 0, False, type(exc).__name__)
    escape = res.start_risk >= ev.tau
    if not res.success:
        return ReplanEvent(state.attempts, "timeout", res.wall_time, res.nodes_explored, 0, escape, res.reason)
    state.path = timed_path(res.smoothed, cfg)
    state.index = 0
    state.escape_path = escape
    return ReplanEvent(state.attempts, "success", res.wall_time, res.nodes_explored, res.nodes_used, escape)


def tick(state: SimState, cfg: SimConfig, scenario: Scenario, modules: Modules,
         rng: np.random.Generator, seed: int) -> dict:
    """Advance one control period; returns the trace record for this tick."""
    dt = cfg.sim.dt
    tau = cfg.apf.tau
    t = state.tick * dt
    truth = scripted_pose(scenario, t)
    obs = observe(truth, cfg.scenario.observation_noise, rng)
    state.history.push(t, obs)
    if obs.valid.any():
        state.last_seen_xy = obs.positions[obs.valid].mean(axis=0)[:2]
    clearance = true_clearance(modules.chain, modules.geo, state.q, truth, modules.human_geo)
    rec: dict = {
        "tick": state.tick, "t": round(t, 10), "q": [float(v) for v in state.q],
        "clearance_mm": clearance * 1000.0, "leg": state.leg, "waypoint": state.index,
        "occluded_joints": int((~obs.valid).sum()), "events": [],
    }
    if state.complete:
        rec.update(mode="done", U=0.0, U_prefix_max=0.0)
        return rec

    forecast = modules.forecaster(state.history.window(), cfg.sim.horizon_steps)
    field = HumanField(forecast, modules.human_geo)
    ev = RiskEvaluator(modules.chain, modules.geo, field, cfg.apf)
    advance = True
    if field.empty or not obs.bone_valid().any():
        # fully occluded: hold if the human vanished inside the workspace
        base = modules.chain.base[:2, 3]
        near = state.last_seen_xy is not None and np.linalg.norm(state.last_seen_xy - base) <= cfg.sim.workspace_radius
        rec.update(U=None, U_prefix_max=None, occluded=True)
        if near:
            advance = False
            state.occlusion_hold_ticks += 1
    else:
        prefix, values = _rescore(state, ev, cfg, t)
        rec.update(U=float(values[0]), U_prefix_max=float(values.max()))
        if not _acceptable(ev, prefix, values, state.escape_path, tau):
            if not state.episode_open:
                state.triggers += 1
                state.episode_open = True
                if state.first_trigger_tick is None:
                    state.first_trigger_tick = state.tick
            ev_rec = _replan(state, cfg, modules, ev, seed)
            state.events.append(ev_rec)
            rec["events"].append(ev_rec.record())
            advance = False
            if ev_rec.status == "success":
                prefix, values = _rescore(state, ev, cfg, t)
                rec["U_prefix_max"] = float(values.max())
                advance = _acceptable(ev, prefix, values, state.escape_path, tau)
        else:
            state.episode_open = False

    state.mode = EXECUTING if advance else HOLDING
    rec["mode"] = state.mode
    rec["escape"] = state.escape_path
    if not advance:
        state.hold_ticks += 1
    elif state.index < len(state.path) - 1:
        state.index += 1
        state.q = state.path[state.index]
    if state.index == len(state.path) - 1 and not state.complete:
        if wrapped_distance(state.q, state.targets[state.leg]) == 0.0:
            state.leg += 1
            state.escape_path = False
            if not state.complete:
                state.path = nominal_leg(state.q, state.targets[state.leg], cfg, modules.env)
                state.index = 0
    return rec


def _rescore(state: SimState, ev: RiskEvaluator, cfg: SimConfig, t: float) -> tuple[np.ndarray, np.ndarray]:
    h = cfg.sim.horizon_steps
    prefix = state.path[state.index: state.index + h + 1]
    times = t + cfg.sim.dt * np.arange(len(prefix))
    tr = trajectory_risk_eval(ev, prefix, times, horizon=h * cfg.sim.dt)
    return prefix, tr.values


# ---------------------------------------------------------------------------
# trial
# ---------------------------------------------------------------------------

def run_trial(cfg: SimConfig, seed: int, modules: Optional[Modules] = None) -> TrialResult:
    """Run one seeded trial to completion or the time budget."""
    modules = build_modules(cfg) if modules is None else modules
    scenario = make_scenario(cfg, seed)
    rng = np.random.default_rng([seed, 23])
    state = init_state(cfg, scenario, modules, rng)
    n_max = int(round(cfg.sim.duration / cfg.sim.dt))
    trace: list[dict] = []
    clearances: list[float] = []
    for k in range(n_max + 1):
        state.tick = k
        t0 = time.perf_counter()
        rec = tick(state, cfg, scenario, modules, rng, seed)
        rec["tick_ms"] = (time.perf_counter() - t0) * 1000.0  # observation to decision, wall clock
        trace.append(rec)
        clearances.append(rec["clearance_mm"] / 1000.0)
        if rec["mode"] == "done":
            break
    metrics = _metrics(cfg, scenario, modules, seed, state, trace, np.array(clearances))
    return TrialResult(metrics, trace)


def _would_violate_tick(cfg: SimConfig, scenario: Scenario, modules: Modules, n_ticks: int) -> int:
    """First tick at which the unreactive nominal schedule comes within ``d_th``; -1 if never."""
    sched = nominal_schedule(cfg, modules.env)
    n = min(max(len(sched), n_ticks), int(round(cfg.sim.duration / cfg.sim.dt)) + 1)
    for k in range(n):
        q = sched[min(k, len(sched) - 1)]
        sk = scripted_pose(scenario, k * cfg.sim.dt)
        if true_clearance(modules.chain, modules.geo, q, sk, modules.human_geo) < cfg.apf.d_th:
            return k
    return -1


def _metrics(cfg: SimConfig, scenario: Scenario, modules: Modules, seed: int, state: SimState,
             trace: list[dict], clear: np.ndarray) -> TrialMetrics:
    evs = state.events
    wall = [e.wall_time_s for e in evs if e.status != "blocked"]
    ok = [e for e in evs if e.status == "success"]
    under = np.flatnonzero(clear < cfg.apf.d_th)
    first_violation = int(under[0]) if len(under) else -1
    would = _would_violate_tick(cfg, scenario, modules, len(trace))
    intrusion = would >= 0
    first_trig = -1 if state.first_trigger_tick is None else state.first_trigger_tick
    covered = (not intrusion) or (0 <= first_trig < would)
    return TrialMetrics(
        scenario=scenario.id,
        seed=seed,
        task_completed=state.complete,
        ticks=len(trace),
        sim_time_s=round((len(trace) - 1) * cfg.sim.dt, 10),
        min_clearance_mm=float(clear.min()) * 1000.0,
        replans_triggered=state.triggers,
        plan_attempts=state.attempts,
        plan_successes=len(ok),
        plan_timeouts=sum(e.status == "timeout" for e in evs),
        plan_blocked=sum(e.status == "blocked" for e in evs),
        plan_time_median_s=float(np.median(wall)) if wall else 0.0,
        plan_time_max_s=float(max(wall)) if wall else 0.0,
        tick_time_p95_ms=float(np.quantile([r["tick_ms"] for r in trace], 0.95)),
        nodes_explored_mean=float(np.mean([e.nodes_explored for e in evs if e.status != "blocked"])) if wall else 0.0,
        nodes_used_mean=float(np.mean([e.nodes_used for e in ok])) if ok else 0.0,
        hold_time_s=round(state.hold_ticks * cfg.sim.dt, 10),
        occlusion_hold_s=round(state.occlusion_hold_ticks * cfg.sim.dt, 10),
        intrusion=intrusion,
        covered=covered,
        first_trigger_tick=first_trig,
        would_violate_tick=would,
        first_violation_tick=first_violation,
        plan_times_s=wall,
    )
