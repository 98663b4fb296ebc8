"""Layered costmaps: static obstacles, inflation, and human-centric layers.

Costs are integers in [0, 255] with 255 lethal.  Layers combine by
cell-wise max, so adding a layer never lowers a cell.  The human layers
keep their analytic form (Gaussian around the human, rear half-plane for
visibility) alongside the rasterized grid so the band optimizer can
sample smooth costs at arbitrary positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .config import CostmapParams, HumanLayerParams
from .world import OccupancyGrid, Pose2D, wrap_angle

LETHAL = 255
INSCRIBED = LETHAL - 1


@dataclass(frozen=True)
class HumanLayerSource:
    """A human whose safety/visibility Gaussians were stamped into a stack."""

    pose: Pose2D
    safety: bool = True
    visibility: bool = True


@dataclass(frozen=True)
class CostmapStack:
    """An occupancy grid plus the combined integer cost field."""

    grid: OccupancyGrid
    cost: np.ndarray
    params: CostmapParams = field(default_factory=CostmapParams)
    human_sources: tuple[HumanLayerSource, ...] = ()

    def __post_init__(self) -> None:
        cost = np.asarray(self.cost, dtype=np.uint8)
        if cost.shape != (self.grid.height, self.grid.width):
            raise ValueError("cost shape does not match grid")
        cost = cost.copy()
        cost.setflags(write=False)
        object.__setattr__(self, "cost", cost)

    def cost_at(self, ix: int, iy: int) -> int:
        return int(self.cost[iy, ix])

    def with_cost(self, cost: np.ndarray, **kw) -> "CostmapStack":
        return replace(self, cost=cost, **kw)


def build_stack(grid: OccupancyGrid, params: CostmapParams | None = None) -> CostmapStack:
    """Static layer only: occupied cells lethal, everything else zero."""
    cost = np.where(grid.cells, LETHAL, 0).astype(np.uint8)
    return CostmapStack(grid, cost, params or CostmapParams())


def inflate(stack: CostmapStack, robot_radius: float) -> CostmapStack:
    """Add the inscribed-radius band and an exponential falloff beyond it.

    Cells whose center lies within ``robot_radius`` of any occupied cell
    center get INSCRIBED; past that the cost decays as
    ``INSCRIBED * exp(-decay * (d - robot_radius))``.
    """
    if robot_radius < 0:
        raise ValueError("robot_radius must be non-negative")
    occupied = stack.grid.cells
    if not occupied.any():
        return stack
    res = stack.grid.resolution
    dist = ndimage.distance_transform_edt(~occupied) * res
    decay = stack.params.inflation_decay
    ring = np.floor(INSCRIBED * np.exp(-decay * (dist - robot_radius)))
    ring = np.clip(ring, 0, INSCRIBED).astype(np.uint8)
    ring[dist <= robot_radius + 1e-9] = INSCRIBED
    ring[occupied] = LETHAL
    return stack.with_cost(np.maximum(stack.cost, ring))


def human_safety_cost(params: HumanLayerParams, human: Pose2D, x: float, y: float) -> float:
    """Isotropic Gaussian around the human, exactly zero past the cutoff."""
    d2 = (x - human.x) ** 2 + (y - human.y) ** 2
    if d2 > params.safety_cutoff ** 2:
        return 0.0
    return params.safety_amplitude * math.exp(-d2 / (2.0 * params.safety_sigma ** 2))


def human_visibility_cost(params: HumanLayerParams, human: Pose2D, x: float, y: float) -> float:
    """Gaussian cost behind the human (rear half-plane), zero elsewhere.

    A point is "behind" when its bearing in the human body frame exceeds
    pi/2 in magnitude.  Cost depends only on distance inside that region.
    """
    dx, dy = x - human.x, y - human.y
    d2 = dx * dx + dy * dy
    if d2 > params.visibility_cutoff ** 2 or d2 == 0.0:
        return 0.0
    bearing = wrap_angle(math.atan2(dy, dx) - human.heading)
    if abs(bearing) <= math.pi / 2.0:
        return 0.0
    return params.visibility_amplitude * math.exp(-d2 / (2.0 * params.visibility_sigma ** 2))


def _layer_window(grid: OccupancyGrid, cx: float, cy: float, radius: float):
    """Cell-index window and center coordinate arrays covering a disc."""
    res = grid.resolution
    x0 = max(0, int((cx - radius - grid.origin.x) / res) - 1)
    x1 = min(grid.width, int((cx + radius - grid.origin.x) / res) + 2)
    y0 = max(0, int((cy - radius - grid.origin.y) / res) - 1)
    y1 = min(grid.height, int((cy + radius - grid.origin.y) / res) + 2)
    if x0 >= x1 or y0 >= y1:
        return None
    xs = grid.origin.x + (np.arange(x0, x1) + 0.5) * res
    ys = grid.origin.y + (np.arange(y0, y1) + 0.5) * res
    return (slice(y0, y1), slice(x0, x1)), np.meshgrid(xs, ys)


def apply_human_layers(
    stack: CostmapStack,
    humans: list[tuple[Pose2D, bool, bool]],
) -> CostmapStack:
    """Max-combine safety and visibility Gaussians for the given humans.

    Each entry is (pose, static, observable); only humans that are both
    static and observable contribute, mirroring the layer semantics of
    the planner (moving humans are handled by bands, not by costmaps).
    """
    p = stack.params.human_layers
    cost = stack.cost.astype(np.float64)
    sources = list(stack.human_sources)
    for pose, static, observable in humans:
        if not (static and observable):
            continue
        win = _layer_window(stack.grid, pose.x, pose.y, p.safety_cutoff)
        if win is not None:
            (sl, (gx, gy)) = win
            d2 = (gx - pose.x) ** 2 + (gy - pose.y) ** 2
            vals = p.safety_amplitude * np.exp(-d2 / (2.0 * p.safety_sigma ** 2))
            vals[d2 > p.safety_cutoff ** 2] = 0.0
            cost[sl] = np.maximum(cost[sl], np.rint(vals))
        win = _layer_window(stack.grid, pose.x, pose.y, p.visibility_cutoff)
        if win is not None:
            (sl, (gx, gy)) = win
            dx, dy = gx - pose.x, gy - pose.y
            d2 = dx * dx + dy * dy
            bearing = np.arctan2(dy, dx) - pose.heading
            behind = np.abs(np.arctan2(np.sin(bearing), np.cos(bearing))) > math.pi / 2.0
            vals = p.visibility_amplitude * np.exp(-d2 / (2.0 * p.visibility_sigma ** 2))
            vals[~behind | (d2 > p.visibility_cutoff ** 2) | (d2 == 0.0)] = 0.0
            cost[sl] = np.maximum(cost[sl], np.rint(vals))
        sources.append(HumanLayerSource(pose))
    return stack.with_cost(np.minimum(cost, LETHAL).astype(np.uint8),
                           human_sources=tuple(sources))


def stamp_obstacle_disc(stack: CostmapStack, x: float, y: float,
                        radius: float, robot_radius: float) -> CostmapStack:
    """Rasterize a circular obstacle (e.g. a stopped human) with local inflation."""
    p = stack.params
    reach = radius + robot_radius + 3.0 / max(p.inflation_decay, 1e-6)
    win = _layer_window(stack.grid, x, y, reach)
    if win is None:
        return stack
    (sl, (gx, gy)) = win
    d = np.hypot(gx - x, gy - y)
    vals = np.floor(INSCRIBED * np.exp(-p.inflation_decay * (d - radius - robot_radius)))
    vals = np.clip(vals, 0, INSCRIBED).astype(np.uint8)
    vals[d <= radius + robot_radius + 1e-9] = INSCRIBED
    vals[d <= radius + 1e-9] = LETHAL
    cost = stack.cost.copy()
    cost[sl] = np.maximum(cost[sl], vals)
    return stack.with_cost(cost)


def export_pgm(stack: CostmapStack) -> str:
    """ASCII PGM (P2) dump of the cost field for external inspection.

    Rows are written top to bottom like the map text format.
    """
    lines = ["P2", f"{stack.grid.width} {stack.grid.height}", str(LETHAL)]
    for iy in range(stack.grid.height - 1, -1, -1):
        lines.append(" ".join(str(int(v)) for v in stack.cost[iy]))
    return "\n".join(lines) + "\n"
