"""Deterministic 2D kinematic simulation and the reactive baseline.

The robot follows unicycle kinematics with exact arc integration.
Humans are purely scripted: closed-form position functions of time, so
trajectories are identical across planners for the same seed (humans
never react to the robot).  Collisions are checked as circle overlaps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import PlannerConfig
from .costmap import INSCRIBED, build_stack, inflate, stamp_obstacle_disc
from .global_plan import NoPathError, PlanInputError, plan_global
from .planner import BACKOFF_RECOVERY, HumanAwarePlanner, PlanResult, classify_humans
from .trace import Trace, spec_hash
from .world import MAX_HUMAN_SPEED, Pose2D, ScenarioSpec, world_to_grid, wrap_angle

__all__ = [
    "integrate_unicycle", "HumanAgent", "make_humans",
    "BaselinePlanner", "run_episode", "PLANNER_IDS",
]

PLANNER_IDS = ("cohan", "baseline")


def integrate_unicycle(pose: Pose2D, v: float, omega: float, dt: float) -> Pose2D:
    """Advance a differential-drive pose by one command, exactly.

    For omega != 0 the motion is a circular arc; the closed form avoids
    the drift a forward-Euler step would accumulate.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    th = pose.heading
    if abs(omega) < 1e-12:
        return Pose2D(pose.x + v * math.cos(th) * dt,
                      pose.y + v * math.sin(th) * dt, th)
    r = v / omega
    th2 = th + omega * dt
    return Pose2D(pose.x + r * (math.sin(th2) - math.sin(th)),
                  pose.y - r * (math.cos(th2) - math.cos(th)),
                  wrap_angle(th2))


# ---------------------------------------------------------------------- #
# scripted humans


@dataclass(frozen=True)
class HumanAgent:
    """One scripted human with jitter already folded into its parameters.

    ``state_at(t)`` is a closed-form function, so episode stepping never
    accumulates integration error and paired runs agree exactly.
    """

    id: str
    radius: float
    kind: str
    start: Pose2D
    speed: float = 0.0
    stop_time: float = math.inf
    center: tuple[float, float] = (0.0, 0.0)
    circle_radius: float = 1.0
    phase: float = 0.0
    ccw: bool = True
    target: tuple[float, float] = (0.0, 0.0)
    trigger_time: float = 0.0

    def state_at(self, t: float) -> tuple[Pose2D, tuple[float, float]]:
        k = self.kind
        if k == "idle" or self.speed <= 0.0:
            return self.start, (0.0, 0.0)
        if k in ("linear", "move_and_stop"):
            ex, ey = math.cos(self.start.heading), math.sin(self.start.heading)
            tau = min(t, self.stop_time) if k == "move_and_stop" else t
            pose = Pose2D(self.start.x + ex * self.speed * tau,
                          self.start.y + ey * self.speed * tau,
                          self.start.heading)
            moving = k == "linear" or t < self.stop_time
            vel = (ex * self.speed, ey * self.speed) if moving else (0.0, 0.0)
            return pose, vel
        if k == "circular":
            s = 1.0 if self.ccw else -1.0
            ang = self.phase + s * (self.speed / self.circle_radius) * t
            px = self.center[0] + self.circle_radius * math.cos(ang)
            py = self.center[1] + self.circle_radius * math.sin(ang)
            vx = -s * self.speed * math.sin(ang)
            vy = s * self.speed * math.cos(ang)
            heading = math.atan2(vy, vx)
            return Pose2D(px, py, heading), (vx, vy)
        if k == "run_to_point":
            dx = self.target[0] - self.start.x
            dy = self.target[1] - self.start.y
            dist = math.hypot(dx, dy)
            face = math.atan2(dy, dx) if dist > 1e-12 else self.start.heading
            if t <= self.trigger_time or dist <= 1e-12:
                return Pose2D(self.start.x, self.start.y, face), (0.0, 0.0)
            travel = dist / self.speed
            tau = min(t - self.trigger_time, travel)
            ex, ey = dx / dist, dy / dist
            pose = Pose2D(self.start.x + ex * self.speed * tau,
                          self.start.y + ey * self.speed * tau, face)
            vel = (ex * self.speed, ey * self.speed) if tau < travel else (0.0, 0.0)
            return pose, vel
        raise ValueError(f"unhandled controller kind {k!r}")


def make_humans(spec: ScenarioSpec, rng: np.random.Generator) -> list[HumanAgent]:
    """Instantiate scripted humans with per-seed jitter.

    Every human consumes exactly five uniform draws (speed, start x/y,
    timing, phase) in scenario order regardless of which jitters its
    fixture enables, so the draw sequence is stable across fixtures.
    """
    agents = []
    for h in spec.humans:
        u = rng.uniform(-1.0, 1.0, size=5)
        prm = h.controller.params
        kind = h.controller.kind
        speed = float(prm.get("speed", 0.0))
        speed *= 1.0 + u[0] * float(prm.get("speed_jitter", 0.0))
        speed = min(max(speed, 0.0), MAX_HUMAN_SPEED)
        sj = float(prm.get("start_jitter", 0.0))
        tj = float(prm.get("time_jitter", 0.0))
        pj = float(prm.get("phase_jitter", 0.0))
        stop_time = max(0.0, float(prm.get("stop_time", math.inf)) + u[3] * tj)
        trigger = max(0.0, float(prm.get("trigger_time", 0.0)) + u[3] * tj)
        if kind == "circular":
            phase = float(prm.get("phase", 0.0)) + u[4] * pj
            center = tuple(float(c) for c in prm["center"])
            cr = float(prm["circle_radius"])
            ccw = bool(prm.get("ccw", True))
            tangent = phase + (math.pi / 2.0 if ccw else -math.pi / 2.0)
            start = Pose2D(center[0] + cr * math.cos(phase),
                           center[1] + cr * math.sin(phase), tangent)
            agents.append(HumanAgent(
                id=h.id, radius=h.radius, kind=kind, start=start, speed=speed,
                center=center, circle_radius=cr, phase=phase, ccw=ccw))
            continue
        start = Pose2D(h.start.x + u[1] * sj, h.start.y + u[2] * sj,
                       h.start.heading)
        target = tuple(float(c) for c in prm["target"][:2]) \
            if kind == "run_to_point" else (0.0, 0.0)
        agents.append(HumanAgent(
            id=h.id, radius=h.radius, kind=kind, start=start, speed=speed,
            stop_time=stop_time, target=target, trigger_time=trigger))
    return agents


# ---------------------------------------------------------------------- #
# reactive baseline


class BaselinePlanner:
    """Replanning pure pursuit: humans are plain inflated obstacles.

    No proxemic layers, no prediction, no modes.  The global plan is
    refreshed every t_replan with all humans stamped at their current
    positions; the follower slows with clearance and halts when its
    lookahead point is blocked or no path exists.
    """

    def __init__(self, spec: ScenarioSpec, cfg: PlannerConfig | None = None):
        self.spec = spec
        self.cfg = cfg or PlannerConfig()
        base = build_stack(spec.grid, self.cfg.costmap)
        self.static_stack = inflate(base, spec.robot_radius)
        # distance from any point to the nearest occupied cell, for slowdown
        free = ~spec.grid.cells
        self._wall_dist = ndimage.distance_transform_edt(
            free) * spec.grid.resolution
        self.goal = spec.robot_goal
        self._path_xy: np.ndarray | None = None
        self._path_cum: np.ndarray | None = None
        self._last_replan = -math.inf
        self.work_stack = self.static_stack
        self._aborted = False

    def _replan(self, t: float, robot: Pose2D,
                tracked: list[tuple[str, Pose2D, tuple[float, float], float]],
                events: list[dict]) -> None:
        stack = self.static_stack
        for _hid, pose, _vel, radius in tracked:
            stack = stamp_obstacle_disc(
                stack, pose.x, pose.y, radius, self.spec.robot_radius)
        self.work_stack = stack
        self._last_replan = t
        try:
            path = plan_global(stack, robot, self.goal)
        except (NoPathError, PlanInputError):
            # a stamped human can transiently bury the start or goal cell
            self._path_xy = None
            events.append({"type": "replan_failed", "t": round(t, 6),
                           "reason": "blocked"})
            return
        xy = np.array([[w.x, w.y] for w in path.waypoints])
        seg = np.hypot(*np.diff(xy, axis=0).T)
        self._path_xy = xy
        self._path_cum = np.concatenate([[0.0], np.cumsum(seg)])
        events.append({"type": "replan", "t": round(t, 6), "reason": "periodic"})

    def _clearance(self, robot: Pose2D,
                   tracked: list[tuple[str, Pose2D, tuple[float, float], float]]
                   ) -> float:
        grid = self.spec.grid
        r = self.spec.robot_radius
        best = math.inf
        if grid.in_bounds_world(robot.x, robot.y):
            ix, iy = world_to_grid(grid, robot.x, robot.y)
            best = self._wall_dist[iy, ix] - r
        for _hid, pose, _vel, radius in tracked:
            best = min(best, robot.distance(pose) - radius - r)
        return max(best, 0.0)

    def plan_step(self, t: float, robot: Pose2D, robot_vel: tuple[float, float],
                  tracked: list[tuple[str, Pose2D, tuple[float, float], float]]
                  ) -> PlanResult:
        b = self.cfg.baseline
        events: list[dict] = []
        if t - self._last_replan >= b.t_replan:
            self._replan(t, robot, tracked, events)
        humans = classify_humans(tracked, robot, self.cfg)
        if self._path_xy is None:
            return PlanResult(command=(0.0, 0.0), mode="baseline",
                              robot_band=None, human_bands=(),
                              humans=tuple(humans), events=tuple(events))
        xy = self._path_xy
        d = np.hypot(xy[:, 0] - robot.x, xy[:, 1] - robot.y)
        i = int(np.argmin(d))
        target_s = self._path_cum[i] + b.lookahead
        j = min(int(np.searchsorted(self._path_cum, target_s)), len(xy) - 1)
        lx, ly = xy[j]
        grid = self.spec.grid
        if grid.in_bounds_world(lx, ly):
            ix, iy = world_to_grid(grid, lx, ly)
            if self.work_stack.cost[iy, ix] >= INSCRIBED:
                events.append({"type": "halt", "t": round(t, 6),
                               "reason": "lookahead blocked"})
                return PlanResult(command=(0.0, 0.0), mode="baseline",
                                  robot_band=None, human_bands=(),
                                  humans=tuple(humans), events=tuple(events))
        lim = self.cfg.robot_limits
        err = wrap_angle(math.atan2(ly - robot.y, lx - robot.x) - robot.heading)
        omega = max(-lim.omega_max, min(lim.omega_max, b.heading_gain * err))
        gap = self._clearance(robot, tracked)
        v = lim.v_max * min(1.0, gap / b.slow_zone)
        v *= max(0.0, math.cos(err))          # never reverse
        if robot.distance(self.goal) < b.lookahead:
            v = min(v, lim.v_max * 0.5)
        return PlanResult(command=(v, omega), mode="baseline", robot_band=None,
                          human_bands=(), humans=tuple(humans),
                          events=tuple(events))


# ---------------------------------------------------------------------- #
# episode driver


def _band_points(band, limit: int = 8) -> list[list[float]]:
    poses = band.poses
    if len(poses) <= limit:
        idx = range(len(poses))
    else:
        idx = np.unique(np.linspace(0, len(poses) - 1, limit).round().astype(int))
    return [[float(poses[i, 0]), float(poses[i, 1]), float(poses[i, 2])]
            for i in idx]


def _step_record(i: int, t: float, robot: Pose2D, cmd: tuple[float, float],
                 result: PlanResult) -> dict:
    humans = [{
        "id": h.id,
        "pose": h.pose.as_list(),
        "vel": [h.velocity[0], h.velocity[1]],
        "class": h.classification,
        "observable": h.observable,
    } for h in result.humans]
    bands: dict = {}
    if result.robot_band is not None:
        bands["robot"] = _band_points(result.robot_band)
    if result.human_bands:
        bands["humans"] = [{"id": hid, "service": svc, "pts": _band_points(b)}
                           for hid, svc, b in result.human_bands]
    services = {hid: svc for hid, svc, _ in result.human_bands}
    rec = {"kind": "step", "i": i, "t": t, "robot": robot.as_list(),
           "cmd": [cmd[0], cmd[1]], "mode": result.mode, "humans": humans}
    if bands:
        rec["bands"] = bands
    if services:
        rec["services"] = services
    if result.events:
        rec["events"] = list(result.events)
    return rec


def run_episode(spec: ScenarioSpec, planner_id: str, seed: int,
                dt: float = 0.1, cfg: PlannerConfig | None = None) -> Trace:
    """Simulate one full episode and return its trace.

    The episode ends at goal arrival, robot contact with a human
    (outcome "collision"), a planner abort, or the scenario time limit
    ("stuck" when the planner reports no recent progress, else
    "timeout").
    """
    if planner_id not in PLANNER_IDS:
        raise ValueError(f"unknown planner {planner_id!r}")
    cfg = cfg or PlannerConfig()
    rng = np.random.default_rng(seed)
    agents = make_humans(spec, rng)
    if planner_id == "cohan":
        planner = HumanAwarePlanner(spec, cfg)
    else:
        planner = BaselinePlanner(spec, cfg)
    header = {"kind": "header", "scenario": spec.name,
              "spec_hash": spec_hash(spec), "planner": planner_id,
              "seed": seed, "dt": dt}
    trace = Trace(header=header)
    robot = spec.robot_start
    vel = (0.0, 0.0)
    lim = cfg.robot_limits
    n_steps = int(round(spec.time_limit_s / dt))
    outcome = "timeout"
    collisions: list[list] = []
    t_end = 0.0
    for k in range(n_steps):
        t = k * dt
        tracked = []
        for a in agents:
            pose, hvel = a.state_at(t)
            tracked.append((a.id, pose, hvel, a.radius))
        result = planner.plan_step(t, robot, vel, tracked)
        v = max(lim.v_min, min(lim.v_max, result.command[0]))
        w = max(-lim.omega_max, min(lim.omega_max, result.command[1]))
        trace.steps.append(_step_record(k, t, robot, (v, w), result))
        t_end = t + dt
        robot = integrate_unicycle(robot, v, w, dt)
        vel = (v, w)
        hit = False
        for a in agents:
            pose, _ = a.state_at(t_end)
            if robot.distance(pose) < spec.robot_radius + a.radius:
                collisions.append([a.id, round(t_end, 6)])
                hit = True
        if hit:
            outcome = "collision"
            break
        if result.aborted:
            outcome = "abort"
            break
        if robot.distance(spec.robot_goal) <= cfg.planner.goal_tolerance:
            outcome = "success"
            break
    else:
        stuck = getattr(getattr(planner, "ctx", None), "stuck", False)
        outcome = "stuck" if stuck else "timeout"
    trace.footer = {"kind": "footer", "outcome": outcome,
                    "t_end": round(t_end, 6), "steps": len(trace.steps),
                    "collisions": collisions,
                    "final_robot": robot.as_list()}
    return trace
