"""Global grid planning: A* over the cost-weighted 8-connected grid.

Edge weight is the step length scaled by ``1 + k * avg_cost / LETHAL``
where k is ``CostmapParams.plan_cost_scale``, so the planner trades a
longer route against crossing high-cost (e.g. proxemic) regions.  The
octile-distance heuristic never exceeds true cost because every edge
weight is at least the plain step length.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .costmap import CostmapStack, INSCRIBED, LETHAL
from .world import BoundsError, Pose2D, grid_to_world, world_to_grid

SQRT2 = math.sqrt(2.0)

# 8-connected neighborhood, fixed order for deterministic expansion
_STEPS = ((1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2))


class NoPathError(RuntimeError):
    """Start and goal are not connected through traversable cells."""


class PlanInputError(ValueError):
    """Start or goal unusable (off-map or inside a blocked cell)."""


@dataclass(frozen=True)
class GlobalPath:
    """Waypoint sequence from start to goal with the accumulated cost."""

    waypoints: tuple[Pose2D, ...]
    cost: float

    @property
    def length(self) -> float:
        pts = self.waypoints
        return sum(pts[i].distance(pts[i + 1]) for i in range(len(pts) - 1))


def _octile(dx: int, dy: int, res: float) -> float:
    dx, dy = abs(dx), abs(dy)
    return res * (max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy))


def edge_weight(res: float, step: float, cost_a: int, cost_b: int, scale: float) -> float:
    """Traversal cost of one grid move; shared by planner and tests."""
    return res * step * (1.0 + scale * (0.5 * (cost_a + cost_b)) / LETHAL)


def plan_global(stack: CostmapStack, start: Pose2D, goal: Pose2D) -> GlobalPath:
    """Minimum-cost 8-connected path from start to goal.

    Cells at INSCRIBED or above are not traversable (the robot center
    cannot legally be there), except the start cell itself so the robot
    can always plan its way out of a brush with the inflation band.
    Ties in f are broken on h then on flat cell index, which makes the
    expansion order, and therefore the returned path, deterministic.
    """
    grid = stack.grid
    res = grid.resolution
    try:
        sx, sy = world_to_grid(grid, start.x, start.y)
        gx, gy = world_to_grid(grid, goal.x, goal.y)
    except BoundsError as exc:
        raise PlanInputError(str(exc)) from exc
    cost = stack.cost
    if cost[sy, sx] >= LETHAL:
        raise PlanInputError("start cell is lethal")
    if cost[gy, gx] >= INSCRIBED:
        raise PlanInputError("goal cell is blocked")

    width, height = grid.width, grid.height
    scale = stack.params.plan_cost_scale
    start_idx = sy * width + sx
    goal_idx = gy * width + gx

    g = np.full(width * height, np.inf)
    parent = np.full(width * height, -1, dtype=np.int64)
    closed = np.zeros(width * height, dtype=bool)
    g[start_idx] = 0.0
    open_heap: list[tuple[float, float, int]] = [
        (_octile(gx - sx, gy - sy, res), _octile(gx - sx, gy - sy, res), start_idx)]

    costs = cost  # local alias
    while open_heap:
        f, _, idx = heapq.heappop(open_heap)
        if closed[idx]:
            continue
        closed[idx] = True
        if idx == goal_idx:
            break
        cy, cx = divmod(idx, width)
        c_here = int(costs[cy, cx])
        for dx, dy, step in _STEPS:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < width and 0 <= ny < height):
                continue
            c_next = int(costs[ny, nx])
            if c_next >= INSCRIBED:
                continue
            nidx = ny * width + nx
            if closed[nidx]:
                continue
            ng = g[idx] + edge_weight(res, step, c_here, c_next, scale)
            if ng < g[nidx]:
                g[nidx] = ng
                parent[nidx] = idx
                h = _octile(gx - nx, gy - ny, res)
                heapq.heappush(open_heap, (ng + h, h, nidx))
    if not closed[goal_idx]:
        raise NoPathError("no traversable path from start to goal")

    chain: list[int] = []
    idx = goal_idx
    while idx != -1:
        chain.append(idx)
        idx = int(parent[idx])
    chain.reverse()

    # cell centers with tangent headings; exact start/goal poses at the ends
    points: list[tuple[float, float]] = []
    for idx in chain:
        cy, cx = divmod(idx, width)
        points.append(grid_to_world(grid, cx, cy))
    points[0] = (start.x, start.y)
    points[-1] = (goal.x, goal.y)
    waypoints: list[Pose2D] = []
    for i, (px, py) in enumerate(points):
        if i + 1 < len(points):
            nx, ny = points[i + 1]
            heading = math.atan2(ny - py, nx - px)
        else:
            heading = goal.heading
        waypoints.append(Pose2D(px, py, heading))
    if len(waypoints) == 1:
        waypoints = [Pose2D(start.x, start.y, start.heading),
                     Pose2D(goal.x, goal.y, goal.heading)]
    return GlobalPath(tuple(waypoints), float(g[goal_idx]))


def plan_human_global(stack: CostmapStack, human_pose: Pose2D, goal: Pose2D) -> GlobalPath:
    """Plan a path for a human agent.

    Callers must hand in a stack without that human's own layer or
    footprint, otherwise the plan would be repelled by the very agent
    it is for.  Moving humans never contribute layers, so the shared
    planning stack already satisfies this.
    """
    return plan_global(stack, human_pose, goal)
