"""Human-aware local planner.

Ties the pieces together: classifies tracked humans, keeps a working
costmap with proxemic layers, runs the four-mode state machine
(single_band, dual_band, vel_obs, backoff_recovery), predicts human
motion, and deforms timed elastic bands for the robot (and, in
dual_band, cooperatively for up to two humans) to produce velocity
commands.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .band import (
    BandContext,
    OptimizationDiverged,
    OtherAgent,
    TimedBand,
    band_maintenance,
    extract_command,
    initialize_band,
    optimize_joint,
)
from .config import PlannerConfig
from .costmap import (
    INSCRIBED,
    LETHAL,
    CostmapStack,
    HumanLayerSource,
    apply_human_layers,
    build_stack,
    inflate,
    stamp_obstacle_disc,
)
from .global_plan import GlobalPath, NoPathError, PlanInputError, plan_global
from . import predict
from .world import Pose2D, ScenarioSpec, world_to_grid, wrap_angle

__all__ = [
    "SINGLE_BAND", "DUAL_BAND", "VEL_OBS", "BACKOFF_RECOVERY",
    "MODES", "LEGAL_EDGES",
    "HumanRecord", "ModeContext", "BackoffState", "PlanResult",
    "classify_humans", "update_mode", "HumanAwarePlanner",
    "boundary_obstacle_points",
]

SINGLE_BAND = "single_band"
DUAL_BAND = "dual_band"
VEL_OBS = "vel_obs"
BACKOFF_RECOVERY = "backoff_recovery"
MODES = (SINGLE_BAND, DUAL_BAND, VEL_OBS, BACKOFF_RECOVERY)

# allowed mode transitions; self-loops are always legal
LEGAL_EDGES = frozenset({
    (SINGLE_BAND, DUAL_BAND), (DUAL_BAND, SINGLE_BAND),
    (SINGLE_BAND, VEL_OBS), (VEL_OBS, SINGLE_BAND),
    (DUAL_BAND, VEL_OBS), (VEL_OBS, DUAL_BAND),
    (VEL_OBS, BACKOFF_RECOVERY),
    (BACKOFF_RECOVERY, SINGLE_BAND),
}) | frozenset((m, m) for m in MODES)

# a band whose first segment commands essentially no motion for this many
# consecutive cycles is treated as tangled and re-seeded from the global path
_STALL_V = 0.02
_STALL_W = 0.05
_STALL_CYCLES = 20


@dataclass
class HumanRecord:
    """One tracked human as the planner sees it this step."""

    id: str
    pose: Pose2D
    velocity: tuple[float, float]
    radius: float
    distance: float                  # center distance to the robot
    classification: str              # "static" | "dynamic"
    visible: bool
    observable: bool

    @property
    def speed(self) -> float:
        return math.hypot(self.velocity[0], self.velocity[1])


def classify_humans(tracked: list[tuple[str, Pose2D, tuple[float, float], float]],
                    robot: Pose2D, cfg: PlannerConfig) -> list[HumanRecord]:
    """Range/FOV visibility, planning-radius observability, motion class.

    ``tracked`` entries are (id, pose, (vx, vy), radius) ground-truth
    observations; there is no sensor model beyond the visible region.
    """
    p = cfg.planner
    out = []
    for hid, pose, vel, radius in tracked:
        d = robot.distance(pose)
        bearing = math.atan2(pose.y - robot.y, pose.x - robot.x)
        in_fov = abs(wrap_angle(bearing - robot.heading)) <= p.visible_fov / 2.0 + 1e-12
        visible = d <= p.visible_range and in_fov
        observable = visible and d <= p.planning_radius
        speed = math.hypot(vel[0], vel[1])
        cls = "dynamic" if speed >= p.v_static else "static"
        out.append(HumanRecord(id=str(hid), pose=pose, velocity=(float(vel[0]), float(vel[1])),
                               radius=float(radius), distance=d, classification=cls,
                               visible=visible, observable=observable))
    return out


@dataclass
class BackoffState:
    """Recovery bookkeeping while in backoff_recovery."""

    substate: str = "reversing"      # reversing | waiting | done | aborted
    reversed_dist: float = 0.0
    wait_until: float = math.inf
    human_id: str | None = None      # blocker we are waiting out
    last_xy: tuple[float, float] | None = None


@dataclass
class ModeContext:
    """Progress tracking and motion memory feeding the mode machine."""

    best_goal_dist: float = math.inf
    last_progress_t: float = 0.0
    stuck: bool = False
    last_moving: dict[str, float] = field(default_factory=dict)
    backoff: BackoffState | None = None

    def note_progress(self, t: float, goal_dist: float, eps: float) -> None:
        if goal_dist < self.best_goal_dist - eps:
            self.best_goal_dist = goal_dist
            self.last_progress_t = t

    def no_progress_for(self, t: float) -> float:
        return t - self.last_progress_t

    def reset_progress(self, t: float, goal_dist: float) -> None:
        self.best_goal_dist = goal_dist
        self.last_progress_t = t


def _effectively_moving(h: HumanRecord, ctx: ModeContext, t: float,
                        v_static: float, debounce: float) -> bool:
    # a just-stopped human counts as moving until the debounce elapses
    if h.speed >= v_static:
        return True
    last = ctx.last_moving.get(h.id)
    return last is not None and (t - last) < debounce


def _recently_dynamic(h: HumanRecord, ctx: ModeContext, t: float,
                      debounce: float, window: float) -> bool:
    last = ctx.last_moving.get(h.id)
    if last is None:
        return False
    stopped_for = t - last
    return debounce <= stopped_for <= window


def update_mode(mode: str, ctx: ModeContext, humans: list[HumanRecord],
                cfg: PlannerConfig, t: float) -> tuple[str, str]:
    """One mode-machine step; returns (new mode, reason).

    Transitions stay on the legal edge set: single_band pairs with
    dual_band and vel_obs, dual_band pairs with vel_obs, recovery is
    reachable only from vel_obs and exits only to single_band.
    """
    p = cfg.planner
    obs = [h for h in humans if h.observable]
    nearest = min(obs, key=lambda h: (h.distance, h.id)) if obs else None

    if mode == BACKOFF_RECOVERY:
        if ctx.backoff is not None and ctx.backoff.substate in ("done", "aborted"):
            return SINGLE_BAND, "recovery finished"
        return BACKOFF_RECOVERY, "recovering"

    if (mode == VEL_OBS and ctx.stuck and nearest is not None
            and nearest.distance < p.backoff_near):
        return BACKOFF_RECOVERY, (
            f"stuck {ctx.no_progress_for(t):.1f}s with human at {nearest.distance:.2f}m")

    moving = [h for h in obs
              if _effectively_moving(h, ctx, t, p.v_static, p.stop_debounce)]
    if len(moving) > p.n_crowd:
        return VEL_OBS, f"crowd of {len(moving)} moving humans"
    if moving:
        return DUAL_BAND, "observable dynamic human"
    if nearest is not None and _recently_dynamic(
            nearest, ctx, t, p.stop_debounce, p.recent_window):
        return VEL_OBS, "nearest human recently stopped"
    return SINGLE_BAND, "no active humans"


@dataclass(frozen=True)
class PlanResult:
    """Outcome of one planning step."""

    command: tuple[float, float]
    mode: str
    robot_band: TimedBand | None
    human_bands: tuple[tuple[str, str, TimedBand], ...]   # (id, service, band)
    humans: tuple[HumanRecord, ...]
    events: tuple[dict, ...]
    aborted: bool = False


def boundary_obstacle_points(grid) -> np.ndarray:
    """Centers of occupied cells that touch free space, as (K, 3) x/y/radius.

    Interior wall cells cannot be the nearest obstacle to any feasible
    configuration, so only the boundary layer is kept.
    """
    occ = grid.cells
    free = ~occ
    pad = np.pad(free, 1, constant_values=False)
    near_free = np.zeros_like(occ)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            near_free |= pad[1 + dy:1 + dy + occ.shape[0], 1 + dx:1 + dx + occ.shape[1]]
    iy, ix = np.nonzero(occ & near_free)
    if len(ix) == 0:
        return np.zeros((0, 3))
    xs = grid.origin.x + (ix + 0.5) * grid.resolution
    ys = grid.origin.y + (iy + 0.5) * grid.resolution
    return np.column_stack([xs, ys, np.zeros(len(ix))])


def _disc_free(stack: CostmapStack, x: float, y: float) -> bool:
    grid = stack.grid
    if not grid.in_bounds_world(x, y):
        return False
    ix, iy = world_to_grid(grid, x, y)
    return stack.cost[iy, ix] < INSCRIBED


class HumanAwarePlanner:
    """Stateful per-episode planner; call :meth:`plan_step` once per tick."""

    def __init__(self, spec: ScenarioSpec, cfg: PlannerConfig | None = None):
        self.spec = spec
        self.cfg = cfg or PlannerConfig()
        base = build_stack(spec.grid, self.cfg.costmap)
        self.static_stack = inflate(base, spec.robot_radius)
        self.static_points = boundary_obstacle_points(spec.grid)
        self.goal = spec.robot_goal
        self.mode: str = SINGLE_BAND
        self.ctx = ModeContext()
        self.band: TimedBand | None = None
        self.gpath: GlobalPath | None = None
        self._gp_xy: np.ndarray | None = None
        self._gp_cum: np.ndarray | None = None
        self._stamp_key: tuple = ()
        self.work_stack: CostmapStack = self.static_stack
        self._last_replan_t = -math.inf
        self._replan_failures = 0
        self._diverge_count = 0
        self._stall_cycles = 0
        self._human_plans: dict[str, dict] = {}   # id -> {goal, path, t}
        self._standoffs: list[tuple[float, float, float]] = []
        self._trail: deque[tuple[float, float]] = deque(maxlen=4000)
        self._aborted = False
        self._started = False

    # ------------------------------------------------------------------ #
    # costmap and global path upkeep

    def _stamped_humans(self, humans: list[HumanRecord], t: float
                        ) -> list[HumanRecord]:
        p = self.cfg.planner
        out = []
        for h in humans:
            if not (h.observable and h.classification == "static"):
                continue
            if _effectively_moving(h, self.ctx, t, p.v_static, p.stop_debounce):
                continue                      # still banded under the debounce
            out.append(h)
        return out

    def _refresh_stack(self, stamped: list[HumanRecord]) -> bool:
        key = tuple(sorted(
            (h.id, round(h.pose.x, 3), round(h.pose.y, 3), round(h.pose.heading, 3))
            for h in stamped))
        if key == self._stamp_key:
            return False
        stack = self.static_stack
        if stamped:
            stack = apply_human_layers(
                stack, [(h.pose, True, True) for h in stamped])
            for h in stamped:
                stack = stamp_obstacle_disc(
                    stack, h.pose.x, h.pose.y, h.radius, self.spec.robot_radius)
        self.work_stack = stack
        self._stamp_key = key
        return True

    def _set_gpath(self, path: GlobalPath | None) -> None:
        self.gpath = path
        if path is None:
            self._gp_xy = None
            self._gp_cum = None
            return
        xy = np.array([[w.x, w.y] for w in path.waypoints])
        seg = np.hypot(*np.diff(xy, axis=0).T)
        self._gp_xy = xy
        self._gp_cum = np.concatenate([[0.0], np.cumsum(seg)])

    def _segment_cost_max(self, stack: CostmapStack, a: Pose2D, b: Pose2D
                          ) -> int | None:
        """Worst cell cost on the straight segment a-b sampled at half-cell
        steps, or None when the segment leaves plannable space."""
        grid = stack.grid
        dist = math.hypot(b.x - a.x, b.y - a.y)
        n = max(2, int(dist / (0.5 * grid.resolution)) + 1)
        worst = 0
        for k in range(n + 1):
            s = k / n
            ix, iy = world_to_grid(grid, a.x + s * (b.x - a.x),
                                   a.y + s * (b.y - a.y))
            if not (0 <= ix < grid.width and 0 <= iy < grid.height):
                return None
            c = stack.cost_at(ix, iy)
            if c >= INSCRIBED:
                return None
            worst = max(worst, c)
        return worst

    def _smooth_path(self, stack: CostmapStack, path: GlobalPath) -> GlobalPath:
        """Straighten the grid staircase out of a planned path.

        Greedy line-of-sight shortcutting, accepting a cut only when it is
        no more costly than the cells the search already paid for, then
        uniform resampling so band seeds do not inherit the cell pitch.
        """
        wps = path.waypoints
        if len(wps) < 2:
            return path
        grid = stack.grid
        wcost = np.empty(len(wps))
        for k, w in enumerate(wps):
            ix, iy = world_to_grid(grid, w.x, w.y)
            inb = 0 <= ix < grid.width and 0 <= iy < grid.height
            wcost[k] = stack.cost_at(ix, iy) if inb else LETHAL
        arc = np.concatenate([[0.0], np.cumsum(
            [wps[k].distance(wps[k + 1]) for k in range(len(wps) - 1)])])
        window = 2.0 * self.cfg.planner.local_horizon
        keep = [0]
        i = 0
        while i < len(wps) - 1:
            hi = int(np.searchsorted(arc, arc[i] + window))
            j = min(hi, len(wps) - 1)
            while j > i + 1:
                m = self._segment_cost_max(stack, wps[i], wps[j])
                if m is not None and m <= wcost[i:j + 1].max():
                    break
                j -= 1
            keep.append(j)
            i = j
        pts = [wps[k] for k in keep]
        xy = np.array([[p.x, p.y] for p in pts])
        seg = np.hypot(*np.diff(xy, axis=0).T)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        total = float(cum[-1])
        if total < 1e-9:
            return GlobalPath(waypoints=(wps[0], wps[-1]), cost=path.cost)
        n = max(1, int(math.ceil(total / self.cfg.band.spacing)))
        s = np.linspace(0.0, total, n + 1)
        rx = np.interp(s, cum, xy[:, 0])
        ry = np.interp(s, cum, xy[:, 1])
        out = []
        for k in range(n + 1):
            hd = (math.atan2(ry[k + 1] - ry[k], rx[k + 1] - rx[k])
                  if k < n else wps[-1].heading)
            out.append(Pose2D(float(rx[k]), float(ry[k]), hd))
        return GlobalPath(waypoints=tuple(out), cost=path.cost)

    def _replan_global(self, robot: Pose2D, t: float, reason: str,
                       events: list[dict]) -> None:
        try:
            path = plan_global(self.work_stack, robot, self.goal)
        except (NoPathError, PlanInputError):
            self._replan_failures += 1
            # pace retries; the last good path stays in place meanwhile
            self._last_replan_t = t
            events.append({"type": "replan_failed", "t": round(t, 6),
                           "reason": reason, "failures": self._replan_failures})
            if (self.mode == SINGLE_BAND
                    and self._replan_failures >= self.cfg.planner.replan_failures_abort):
                self._abort(events, t, "global planning failed repeatedly")
            return
        self._replan_failures = 0
        self._last_replan_t = t
        self._set_gpath(self._smooth_path(self.work_stack, path))
        events.append({"type": "replan", "t": round(t, 6), "reason": reason})

    def _local_goal(self, robot: Pose2D) -> tuple[Pose2D, list[Pose2D]] | None:
        """Goal pose `local_horizon` meters down the global path, plus the
        path slice from the robot to it (for band seeding).

        A stale path may run straight through a human who has since stopped
        and been stamped into the map.  Pinning the band's far end inside
        that disc would drag the whole band through it, so the walk stops
        short of any stamped human's stand-off circle; if even the first
        step ahead is inside one, the robot holds."""
        if self._gp_xy is None or len(self._gp_xy) == 0:
            return None
        d = np.hypot(self._gp_xy[:, 0] - robot.x, self._gp_xy[:, 1] - robot.y)
        i = int(np.argmin(d))
        target_s = self._gp_cum[i] + self.cfg.planner.local_horizon
        j = int(np.searchsorted(self._gp_cum, target_s))
        wps = self.gpath.waypoints
        if j >= len(wps):
            goal = self.goal
            j = len(wps) - 1
        else:
            goal = wps[j]
        cand = list(wps[i + 1:j]) + [goal]
        if self._standoffs:
            free: list[Pose2D] = []
            for pose in cand:
                if any(math.hypot(pose.x - sx, pose.y - sy) < sr
                       for sx, sy, sr in self._standoffs):
                    break
                free.append(pose)
            if not free:
                return None
            cand = free
        return cand[-1], [robot] + cand

    # ------------------------------------------------------------------ #
    # band upkeep

    def _advance_band(self, band: TimedBand, start: Pose2D, goal: Pose2D,
                      v_now: float) -> TimedBand | None:
        """Warm-start: prune passed configs, re-pin both ends, re-time the
        first segment so it keeps pace with the rest of the band.

        Without the re-timing the head segment shrinks as the robot
        advances into it, the implied start velocity collapses, and the
        optimizer settles into a linger-at-start valley walled off by
        acceleration hinges.  Returns None when the band has drifted too
        far from the new local goal and must be rebuilt.
        """
        poses = band.poses.copy()
        dts = band.dts.copy()
        hx, hy = math.cos(start.heading), math.sin(start.heading)
        dropped = 0
        while len(poses) > 2 and dropped < 6:
            d0 = math.hypot(poses[0, 0] - start.x, poses[0, 1] - start.y)
            rx = poses[1, 0] - start.x
            ry = poses[1, 1] - start.y
            d1 = math.hypot(rx, ry)
            # passed, reached, or left behind the heading half-plane
            if d1 <= d0 or d1 < 0.1 or rx * hx + ry * hy <= 0.0:
                poses = poses[1:]
                dts = dts[1:]
                dropped += 1
            else:
                break
        end_shift = math.hypot(poses[-1, 0] - goal.x, poses[-1, 1] - goal.y)
        if end_shift > 0.6:
            return None
        poses[0] = (start.x, start.y, start.heading)
        poses[-1] = (goal.x, goal.y, goal.heading)
        d1 = math.hypot(poses[1, 0] - start.x, poses[1, 1] - start.y)
        lim = self.cfg.robot_limits
        chain_v = (math.hypot(poses[2, 0] - poses[1, 0], poses[2, 1] - poses[1, 1])
                   / max(dts[1], 1e-6)) if len(poses) > 2 else lim.v_max
        v_ref = min(max(v_now, chain_v, 0.2 * lim.v_max), lim.v_max)
        dts = dts.copy()
        dts[0] = min(max(d1 / v_ref, self.cfg.band.dt_floor),
                     2.0 * self.cfg.band.dt_ref)
        return TimedBand(poses, dts)

    def _robot_band_context(self, humans: list[HumanRecord],
                            banded_ids: set[str],
                            frozen_others: list[OtherAgent],
                            stamped: list[HumanRecord],
                            v: float, omega: float) -> BandContext:
        extra_pts = [[h.pose.x, h.pose.y, h.radius] for h in stamped]
        sources = list(self.work_stack.human_sources)
        stamped_ids = {h.id for h in stamped}
        for h in humans:
            if not h.observable:
                continue
            if h.classification == "static":
                if h.id not in stamped_ids:
                    # just stopped: standing, but not yet stamped
                    sources.append(HumanLayerSource(pose=h.pose))
                    extra_pts.append([h.pose.x, h.pose.y, h.radius])
            elif h.id not in banded_ids:
                # only the nearest two movers carry bands; the rest repel
                # as plain points, refreshed every step
                extra_pts.append([h.pose.x, h.pose.y, h.radius])
        obstacles = self.static_points
        if extra_pts:
            obstacles = np.vstack([self.static_points, np.asarray(extra_pts)])
        return BandContext(
            weights=self.cfg.band.weights,
            limits=self.cfg.robot_limits,
            params=self.cfg.band,
            self_radius=self.spec.robot_radius,
            obstacles=obstacles,
            others=tuple(frozen_others),
            layer_params=self.cfg.costmap.human_layers,
            layer_sources=tuple(sources),
            v_init=v, omega_init=omega,
            partner_fields=True)

    def _human_band_context(self, h: HumanRecord, stamped: list[HumanRecord],
                            service: str) -> BandContext:
        extra = [[s.pose.x, s.pose.y, s.radius] for s in stamped if s.id != h.id]
        obstacles = self.static_points
        if extra:
            obstacles = np.vstack([self.static_points, np.asarray(extra)])
        p = self.cfg.planner
        # the human walks at its own pace: no travel-time pressure, and an
        # extrapolated band does not stop at its horizon end
        weights = replace(self.cfg.band.weights, time=0.0)
        return BandContext(
            weights=weights,
            limits=p.human_limits,
            params=self.cfg.band,
            self_radius=h.radius,
            obstacles=obstacles,
            layer_sources=(),                 # no proxemic self-penalty
            v_init=h.speed, omega_init=0.0,
            nonholo_scale=p.human_nonholo_scale,
            terminal_rest=service != "vel_obs")

    # ------------------------------------------------------------------ #
    # human prediction

    def _predict_path(self, h: HumanRecord, robot: Pose2D, service: str,
                      t: float) -> tuple[str, GlobalPath] | None:
        """Resolve one human's predicted path, with the fallback chain
        external -> configured service -> constant-velocity."""
        p = self.cfg.planner
        pred = self.spec.prediction
        if service == "external":
            supplied = pred.external_paths.get(h.id)
            if supplied:
                path = GlobalPath(waypoints=supplied, cost=0.0)
                try:
                    return "external", predict.predict_external(h.pose, path)
                except predict.PredictionUnavailable:
                    pass
            service = pred.service if pred.service in ("behind", "goal") else "vel_obs"
        if service in ("behind", "goal"):
            cached = self._human_plans.get(h.id)
            if cached is not None and self._cache_ok(cached, h, robot, service, t):
                return service, cached["path"]
            try:
                if service == "behind":
                    path = predict.predict_behind(
                        h.pose, robot, self.static_stack, p.behind_offset)
                else:
                    path = predict.predict_goal(
                        h.pose, h.velocity, pred.goals, self.static_stack)
            except predict.PredictionUnavailable:
                service = "vel_obs"
            else:
                end = path.waypoints[-1]
                path = self._smooth_path(self.static_stack, path)
                self._human_plans[h.id] = {
                    "service": service, "path": path, "t": t,
                    "goal": (end.x, end.y)}
                return service, path
        if service == "vel_obs":
            try:
                path = predict.predict_vel_obs(
                    h.pose, h.velocity, self.work_stack,
                    p.predict_horizon, p.predict_step, p.v_static)
                return "vel_obs", path
            except predict.PredictionUnavailable:
                return None
        return None

    @staticmethod
    def _off_path(pose: Pose2D, path: GlobalPath, tol: float = 0.5) -> bool:
        d = min(pose.distance(w) for w in path.waypoints)
        return d > tol

    def _cache_ok(self, cached: dict, h: HumanRecord, robot: Pose2D,
                  service: str, t: float) -> bool:
        """A cached human plan stays valid while fresh, on-path, and
        still aimed at (nearly) the same goal."""
        if cached.get("service") != service:
            return False
        if t - cached["t"] > self.cfg.planner.replan_period:
            return False
        if self._off_path(h.pose, cached["path"]):
            return False
        if service == "behind":
            off = self.cfg.planner.behind_offset
            gx = robot.x + off * math.cos(h.pose.heading)
            gy = robot.y + off * math.sin(h.pose.heading)
            if math.hypot(gx - cached["goal"][0], gy - cached["goal"][1]) > 0.5:
                return False
        return True

    def _extrapolation_band(self, h: HumanRecord, path: GlobalPath) -> TimedBand:
        # constant-velocity samples arrive uniformly spaced in time
        step = self.cfg.planner.predict_step
        poses = np.array([[w.x, w.y, w.heading] for w in path.waypoints])
        dts = np.full(len(poses) - 1, step)
        return TimedBand(poses, dts)

    def _truncate_path(self, path: GlobalPath, horizon: float) -> list[Pose2D]:
        pts = list(path.waypoints)
        out = [pts[0]]
        run = 0.0
        for a, b in zip(pts, pts[1:]):
            run += a.distance(b)
            out.append(b)
            if run >= horizon:
                break
        return out

    # ------------------------------------------------------------------ #
    # recovery

    def _backoff_step(self, t: float, robot: Pose2D,
                      humans: list[HumanRecord], events: list[dict]
                      ) -> tuple[float, float]:
        p = self.cfg.planner
        bs = self.ctx.backoff
        assert bs is not None
        if bs.substate == "reversing":
            if bs.last_xy is not None:
                bs.reversed_dist += math.hypot(robot.x - bs.last_xy[0],
                                               robot.y - bs.last_xy[1])
            bs.last_xy = (robot.x, robot.y)
            r = self.spec.robot_radius
            nx, ny = -math.sin(robot.heading), math.cos(robot.heading)
            for side in (1.0, -1.0):
                cx = robot.x + side * nx * (2.0 * r + 0.1)
                cy = robot.y + side * ny * (2.0 * r + 0.1)
                mx = robot.x + side * nx * (r + 0.05)
                my = robot.y + side * ny * (r + 0.05)
                if _disc_free(self.work_stack, cx, cy) and \
                        _disc_free(self.work_stack, mx, my):
                    bs.substate = "waiting"
                    bs.wait_until = t + p.t_wait
                    events.append({"type": "backoff_waiting", "t": round(t, 6)})
                    return 0.0, 0.0
            if bs.reversed_dist >= p.l_back:
                self._abort(events, t, "no free pocket while reversing")
                bs.substate = "aborted"
                return 0.0, 0.0
            tgt = self._reverse_target(robot)
            if tgt is None:
                ux = -math.cos(robot.heading)
                uy = -math.sin(robot.heading)
            else:
                d = math.hypot(tgt[0] - robot.x, tgt[1] - robot.y)
                ux = (tgt[0] - robot.x) / d
                uy = (tgt[1] - robot.y) / d
            reach = self.spec.robot_radius + 0.15
            bx, by = robot.x + ux * reach, robot.y + uy * reach
            if not _disc_free(self.work_stack, bx, by):
                self._abort(events, t, "dead end behind the robot")
                bs.substate = "aborted"
                return 0.0, 0.0
            omega = self._reverse_steering(robot, tgt)
            return -p.v_back, omega
        if bs.substate == "waiting":
            blocker = next((h for h in humans if h.id == bs.human_id), None)
            passed = blocker is None or not blocker.observable
            if blocker is not None:
                along = ((blocker.pose.x - robot.x) * math.cos(robot.heading)
                         + (blocker.pose.y - robot.y) * math.sin(robot.heading))
                passed = passed or along < 0.0
            if passed or t >= bs.wait_until:
                bs.substate = "done"
                events.append({"type": "backoff_done", "t": round(t, 6),
                               "reason": "human passed" if passed else "wait timeout"})
            return 0.0, 0.0
        return 0.0, 0.0

    def _reverse_target(self, robot: Pose2D) -> tuple[float, float] | None:
        """Breadcrumb 0.6 m further back along the robot's own approach
        trail, anchored at the breadcrumb nearest the current position so
        already-retraced stretches are not counted twice."""
        pts = self._trail
        if not pts:
            return None
        i = min(range(len(pts)),
                key=lambda k: (pts[k][0] - robot.x) ** 2
                + (pts[k][1] - robot.y) ** 2)
        run = 0.0
        px, py = pts[i]
        for k in range(i - 1, -1, -1):
            tx, ty = pts[k]
            run += math.hypot(tx - px, ty - py)
            px, py = tx, ty
            if run >= 0.6:
                return (tx, ty)
        sx, sy = pts[0]
        if math.hypot(sx - robot.x, sy - robot.y) > 0.05:
            return (sx, sy)
        return None

    def _reverse_steering(self, robot: Pose2D,
                          target: tuple[float, float] | None) -> float:
        """Steer backwards toward a breadcrumb on the approach trail."""
        if target is None:
            return 0.0
        want = math.atan2(target[1] - robot.y, target[0] - robot.x)
        err = wrap_angle(want - (robot.heading + math.pi))
        lim = self.cfg.robot_limits.omega_max * 0.5
        return max(-lim, min(lim, 1.5 * err))

    def _abort(self, events: list[dict], t: float, reason: str) -> None:
        if not self._aborted:
            self._aborted = True
            events.append({"type": "abort", "t": round(t, 6), "reason": reason})

    # ------------------------------------------------------------------ #

    def plan_step(self, t: float, robot: Pose2D, robot_vel: tuple[float, float],
                  tracked: list[tuple[str, Pose2D, tuple[float, float], float]]
                  ) -> PlanResult:
        """One full planning iteration; returns the command and telemetry."""
        p = self.cfg.planner
        events: list[dict] = []
        humans = classify_humans(tracked, robot, self.cfg)
        for h in humans:
            if h.speed >= p.v_static:
                self.ctx.last_moving[h.id] = t

        # progress tracking drives the stuck flag
        d_goal = robot.distance(self.goal)
        if not self._started:
            self.ctx.reset_progress(t, d_goal)
            self._started = True
        self.ctx.note_progress(t, d_goal, p.eps_progress)
        was_stuck = self.ctx.stuck
        self.ctx.stuck = self.ctx.no_progress_for(t) >= p.w_stuck
        if self.ctx.stuck and not was_stuck:
            events.append({"type": "stuck", "t": round(t, 6),
                           "no_progress_s": round(self.ctx.no_progress_for(t), 3)})

        # collision-imminent warning
        for h in humans:
            gap = h.distance - (self.spec.robot_radius + h.radius)
            if gap < self.cfg.sim.imminent_margin:
                events.append({"type": "collision_imminent", "t": round(t, 6),
                               "human": h.id, "gap": round(gap, 4)})
                break

        stamped = self._stamped_humans(humans, t)
        stack_changed = self._refresh_stack(stamped)
        self._standoffs = [
            (h.pose.x, h.pose.y, h.radius + self.spec.robot_radius + 0.4)
            for h in stamped]

        prev_mode = self.mode
        new_mode, reason = update_mode(self.mode, self.ctx, humans, self.cfg, t)
        if new_mode != prev_mode:
            obs = [h for h in humans if h.observable]
            nearest = min((h.distance for h in obs), default=math.inf)
            ev = {"type": "mode_transition", "t": round(t, 6),
                  "from": prev_mode, "to": new_mode, "reason": reason,
                  "nearest": round(nearest, 4) if math.isfinite(nearest) else None,
                  "no_progress_s": round(self.ctx.no_progress_for(t), 3)}
            events.append(ev)
            self.mode = new_mode
            if new_mode == BACKOFF_RECOVERY:
                blocker = min(obs, key=lambda h: (h.distance, h.id), default=None) \
                    if obs else None
                self.ctx.backoff = BackoffState(
                    human_id=blocker.id if blocker else None)
                self.band = None
            if prev_mode == BACKOFF_RECOVERY:
                self.ctx.backoff = None
                self.ctx.reset_progress(t, d_goal)
                self.ctx.stuck = False

        if self.mode != BACKOFF_RECOVERY:
            # reversing consumes the breadcrumb trail rather than extending it
            self._trail.append((robot.x, robot.y))

        if self.mode == BACKOFF_RECOVERY:
            v, w = self._backoff_step(t, robot, humans, events)
            return PlanResult(command=(v, w), mode=self.mode, robot_band=None,
                              human_bands=(), humans=tuple(humans),
                              events=tuple(events), aborted=self._aborted)

        # global path upkeep
        need = None
        if self.gpath is None:
            need = "init"
        elif new_mode != prev_mode:
            need = "mode change"
        elif stack_changed:
            need = "costmap change"
        elif t - self._last_replan_t >= p.replan_period:
            need = "periodic"
        if need is not None:
            self._replan_global(robot, t, need, events)
        if self.gpath is None:
            # nothing to follow; hold still until a replan succeeds or abort
            return PlanResult(command=(0.0, 0.0), mode=self.mode, robot_band=None,
                              human_bands=(), humans=tuple(humans),
                              events=tuple(events), aborted=self._aborted)

        lg = self._local_goal(robot)
        if lg is None:
            return PlanResult(command=(0.0, 0.0), mode=self.mode, robot_band=None,
                              human_bands=(), humans=tuple(humans),
                              events=tuple(events), aborted=self._aborted)
        local_goal, seed = lg

        rebuilt = False
        if self.band is not None:
            self.band = self._advance_band(self.band, robot, local_goal,
                                           robot_vel[0])
        if self.band is None:
            self.band = initialize_band(seed, self.cfg.robot_limits, self.cfg.band)
            rebuilt = True

        # band attachment per mode
        joint_bands = [self.band]
        joint_ctx_ids: list[str | None] = [None]
        frozen_others: list[OtherAgent] = []
        human_band_rows: list[tuple[str, str, TimedBand]] = []
        banded_ids: set[str] = set()
        movers = sorted(
            (h for h in humans if h.observable and h.speed >= p.v_static),
            key=lambda h: (h.distance, h.id))
        if self.mode == DUAL_BAND:
            for h in movers[:2]:      # nearest two deform cooperatively
                svc = predict.select_service(self.mode, self.spec.prediction, h.id)
                got = self._predict_path(h, robot, svc, t)
                if got is None:
                    continue
                svc, path = got
                if svc == "vel_obs":
                    hb = self._extrapolation_band(h, path)
                else:
                    seed_h = self._truncate_path(path, p.local_horizon)
                    hb = initialize_band(seed_h, p.human_limits, self.cfg.band)
                joint_bands.append(hb)
                joint_ctx_ids.append(h.id)
                banded_ids.add(h.id)
                human_band_rows.append((h.id, svc, hb))
        elif self.mode == VEL_OBS:
            # nearest two movers repel as frozen constant-velocity bands
            for h in movers[:2]:
                got = self._predict_path(h, robot, "vel_obs", t)
                if got is None:
                    continue
                _, path = got
                hb = self._extrapolation_band(h, path)
                frozen_others.append(OtherAgent(band=hb, radius=h.radius))
                banded_ids.add(h.id)
                human_band_rows.append((h.id, "vel_obs", hb))

        ctxs = [self._robot_band_context(
            humans, banded_ids, frozen_others, stamped,
            robot_vel[0], robot_vel[1])]
        by_id = {h.id: h for h in humans}
        for (hid, svc, _b), _cid in zip(human_band_rows, joint_ctx_ids[1:]):
            ctxs.append(self._human_band_context(by_id[hid], stamped, svc))

        iters = p.opt_iters_init if rebuilt else p.opt_iters_warm
        try:
            joint_bands[0] = band_maintenance(joint_bands[0], self.cfg.band)
            out = optimize_joint(joint_bands, ctxs, iters)
        except OptimizationDiverged:
            self._diverge_count += 1
            events.append({"type": "replan", "t": round(t, 6),
                           "reason": "optimization diverged"})
            self.band = None
            self._set_gpath(None)
            if self._diverge_count >= 3:
                self._abort(events, t, "optimizer diverged repeatedly")
            return PlanResult(command=(0.0, 0.0), mode=self.mode, robot_band=None,
                              human_bands=(), humans=tuple(humans),
                              events=tuple(events), aborted=self._aborted)
        self._diverge_count = 0
        self.band = out[0]
        if self.mode == DUAL_BAND:
            # joint bands after the robot's line up with the rows appended above
            human_band_rows = [(hid, svc, out[1 + i])
                               for i, (hid, svc, _)
                               in enumerate(human_band_rows)]

        v, w = extract_command(self.band, self.cfg.robot_limits)
        band_out = self.band
        if band_out.at_goal or abs(v) >= _STALL_V or abs(w) >= _STALL_W:
            self._stall_cycles = 0
        else:
            self._stall_cycles += 1
            if self._stall_cycles >= _STALL_CYCLES:
                # head tangled beyond what warm-start pruning can fix;
                # re-seed from the global path next cycle
                self._stall_cycles = 0
                self.band = None
                events.append({"type": "band_reset", "t": round(t, 6),
                               "reason": "stalled"})
        return PlanResult(command=(v, w), mode=self.mode, robot_band=band_out,
                          human_bands=tuple(human_band_rows),
                          humans=tuple(humans), events=tuple(events),
                          aborted=self._aborted)
