"""Prediction services that guess where a tracked human is heading.

Four services cover the planner's needs: a goal placed behind the robot
along the human's current heading (head-on encounters), selection among
scenario-supplied candidate goals by heading alignment, plain
constant-velocity extrapolation, and pass-through of an externally
supplied path.  Which service applies depends on the planning mode; see
:func:`select_service`.
"""
from __future__ import annotations

import math
from typing import Sequence

from .costmap import INSCRIBED, LETHAL, CostmapStack
from .global_plan import GlobalPath, NoPathError, plan_human_global
from .world import Pose2D, PredictionSpec, grid_to_world, world_to_grid

__all__ = [
    "PredictionUnavailable",
    "predict_behind",
    "predict_goal",
    "predict_vel_obs",
    "predict_external",
    "select_service",
]


class PredictionUnavailable(Exception):
    """No prediction can be produced; the caller should fall back."""


def _project_free(stack: CostmapStack, x: float, y: float,
                  max_shift: float = 1.0) -> Pose2D | None:
    """Nearest plannable cell center within max_shift of (x, y), if any."""
    grid = stack.grid
    res = grid.resolution
    reach = int(math.ceil(max_shift / res)) + 1
    try:
        ix0, iy0 = world_to_grid(grid, x, y)
    except Exception:
        return None
    best = None
    best_d = max_shift
    for iy in range(max(0, iy0 - reach), min(grid.height, iy0 + reach + 1)):
        for ix in range(max(0, ix0 - reach), min(grid.width, ix0 + reach + 1)):
            if stack.cost[iy, ix] >= INSCRIBED:
                continue
            cx, cy = grid_to_world(grid, ix, iy)
            d = math.hypot(cx - x, cy - y)
            if d <= best_d:
                if best is None or d < best_d:
                    best, best_d = (cx, cy), d
    if best is None:
        return None
    return Pose2D(best[0], best[1], 0.0)


def predict_behind(human_pose: Pose2D, robot_pose: Pose2D,
                   stack: CostmapStack, offset: float) -> GlobalPath:
    """Path to a goal placed past the robot along the human's heading.

    Meant for head-on encounters: the human is assumed to keep walking
    through the robot's position and `offset` meters beyond it.  The
    goal is snapped to the nearest plannable cell.

    Raises PredictionUnavailable when no free cell exists near the goal
    or no path reaches it; callers then fall back to extrapolation.
    """
    gx = robot_pose.x + offset * math.cos(human_pose.heading)
    gy = robot_pose.y + offset * math.sin(human_pose.heading)
    goal = _project_free(stack, gx, gy)
    if goal is None:
        raise PredictionUnavailable("no free cell near the behind-goal")
    try:
        return plan_human_global(stack, human_pose, goal)
    except NoPathError as exc:
        raise PredictionUnavailable(str(exc)) from exc


def predict_goal(human_pose: Pose2D, human_velocity: tuple[float, float],
                 candidates: Sequence[Pose2D], stack: CostmapStack) -> GlobalPath:
    """Path to the candidate goal the human is most nearly walking toward.

    Alignment is the cosine between the human's velocity and the bearing
    to each candidate; ties (within 1e-9) go to the nearer candidate,
    then to list order.  Raises PredictionUnavailable when the winning
    candidate is unreachable.
    """
    if not candidates:
        raise ValueError("candidate goal list is empty")
    vx, vy = human_velocity
    speed = math.hypot(vx, vy)
    if speed < 1e-9:
        # degenerate tracked velocity: use the facing direction instead
        vx, vy = math.cos(human_pose.heading), math.sin(human_pose.heading)
        speed = 1.0
    scored = []
    for idx, cand in enumerate(candidates):
        dx, dy = cand.x - human_pose.x, cand.y - human_pose.y
        dist = math.hypot(dx, dy)
        if dist < 1e-9:
            align = 1.0
        else:
            align = (vx * dx + vy * dy) / (speed * dist)
        scored.append((align, dist, idx, cand))
    best_align = max(s[0] for s in scored)
    tied = [s for s in scored if s[0] >= best_align - 1e-9]
    tied.sort(key=lambda s: (s[1], s[2]))
    goal = tied[0][3]
    try:
        return plan_human_global(stack, human_pose, goal)
    except NoPathError as exc:
        raise PredictionUnavailable(str(exc)) from exc


def predict_vel_obs(human_pose: Pose2D, human_velocity: tuple[float, float],
                    stack: CostmapStack, horizon: float, step: float,
                    v_static: float) -> GlobalPath:
    """Constant-velocity extrapolation sampled every `step` seconds.

    The path is truncated before the first sample that leaves the map
    or lands in a lethal cell.  Raises PredictionUnavailable for humans
    slower than v_static (no motion to extrapolate) or when truncation
    leaves fewer than two waypoints.
    """
    vx, vy = human_velocity
    speed = math.hypot(vx, vy)
    if speed < v_static:
        raise PredictionUnavailable("human is not moving")
    heading = math.atan2(vy, vx)
    grid = stack.grid
    pts: list[Pose2D] = [Pose2D(human_pose.x, human_pose.y, heading)]
    n = int(round(horizon / step))
    for k in range(1, n + 1):
        t = k * step
        x, y = human_pose.x + vx * t, human_pose.y + vy * t
        if not grid.in_bounds_world(x, y):
            break
        ix, iy = world_to_grid(grid, x, y)
        if stack.cost[iy, ix] >= LETHAL:
            break
        pts.append(Pose2D(x, y, heading))
    if len(pts) < 2:
        raise PredictionUnavailable("extrapolation immediately blocked")
    length = speed * step * (len(pts) - 1)
    return GlobalPath(waypoints=tuple(pts), cost=length)


def predict_external(human_pose: Pose2D, supplied: GlobalPath) -> GlobalPath:
    """Pass through an externally supplied path after a sanity check.

    The path must start within 0.5 m of the human's tracked position;
    otherwise it is rejected and the caller falls back to the
    configured service.
    """
    if not supplied.waypoints:
        raise PredictionUnavailable("external path is empty")
    start = supplied.waypoints[0]
    if human_pose.distance(start) > 0.5:
        raise PredictionUnavailable("external path does not start at the human")
    return supplied


def select_service(mode: str, prediction: PredictionSpec, human_id: str) -> str:
    """Service id a human band must use in the given planning mode.

    Returns one of "behind", "goal", "vel_obs", "external" or "none".
    VelObs and BackoffRecovery always extrapolate; DualBand prefers an
    external path when one is supplied for this human, then the
    configured service, then extrapolation; SingleBand predicts nothing.
    """
    if mode in ("vel_obs", "backoff_recovery"):
        return "vel_obs"
    if mode == "dual_band":
        if prediction.external and human_id in prediction.external_paths:
            return "external"
        if prediction.service in ("behind", "goal"):
            return prediction.service
        return "vel_obs"
    return "none"
