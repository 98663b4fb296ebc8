"""World model: poses, occupancy grids, and scenario files.

Map files are plain text: a ``W H RES`` header line followed by H rows of
W characters, '.' free and '#' occupied.  Rows are listed top to bottom,
so the first text row is the highest y band of the world.  Scenario files
are JSON; see ``load_scenario`` for the schema.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

OCC_CHAR = "#"
FREE_CHAR = "."


class MapFormatError(ValueError):
    """Malformed map text."""


class BoundsError(ValueError):
    """World coordinate outside the grid."""


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario description."""


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.atan2(math.sin(a), math.cos(a))
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def compose(self, other: "Pose2D") -> "Pose2D":
        """Apply ``other`` in this pose's frame (SE(2) composition)."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        return Pose2D(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.heading + other.heading,
        )

    def distance(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.heading]


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean occupancy over a regular grid; cells[iy, ix] True = occupied."""

    width: int
    height: int
    resolution: float
    cells: np.ndarray
    origin: Pose2D = field(default_factory=lambda: Pose2D(0.0, 0.0, 0.0))

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise MapFormatError("grid dimensions must be positive")
        if self.resolution <= 0:
            raise MapFormatError("resolution must be positive")
        cells = np.asarray(self.cells, dtype=bool)
        if cells.shape != (self.height, self.width):
            raise MapFormatError(
                f"cell array shape {cells.shape} != (H={self.height}, W={self.width})")
        cells = cells.copy()
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def extent(self) -> tuple[float, float]:
        """World size (x_span, y_span) in meters."""
        return self.width * self.resolution, self.height * self.resolution

    def occupied_at(self, ix: int, iy: int) -> bool:
        return bool(self.cells[iy, ix])

    def in_bounds_world(self, x: float, y: float) -> bool:
        dx, dy = x - self.origin.x, y - self.origin.y
        sx, sy = self.extent
        return 0.0 <= dx < sx and 0.0 <= dy < sy

    def render(self) -> str:
        """Inverse of load_map (header plus rows, top row = highest y)."""
        lines = [f"{self.width} {self.height} {self.resolution:g}"]
        for iy in range(self.height - 1, -1, -1):
            row = self.cells[iy]
            lines.append("".join(OCC_CHAR if c else FREE_CHAR for c in row))
        return "\n".join(lines) + "\n"


def load_map(text: str) -> OccupancyGrid:
    """Parse map text into an OccupancyGrid; raises MapFormatError on any defect."""
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapFormatError("empty map text")
    header = lines[0].split()
    if len(header) != 3:
        raise MapFormatError(f"header must be 'W H RES', got {lines[0]!r}")
    try:
        width, height = int(header[0]), int(header[1])
        resolution = float(header[2])
    except ValueError as exc:
        raise MapFormatError(f"bad header {lines[0]!r}") from exc
    if width <= 0 or height <= 0:
        raise MapFormatError("W and H must be positive")
    if not (resolution > 0 and math.isfinite(resolution)):
        raise MapFormatError("RES must be positive and finite")
    rows = lines[1:]
    if len(rows) != height:
        raise MapFormatError(f"expected {height} rows, got {len(rows)}")
    cells = np.zeros((height, width), dtype=bool)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MapFormatError(f"row {r} has length {len(row)}, expected {width}")
        bad = set(row) - {OCC_CHAR, FREE_CHAR}
        if bad:
            raise MapFormatError(f"row {r} has invalid characters {sorted(bad)!r}")
        # text row 0 is the top of the map, i.e. the highest grid row
        iy = height - 1 - r
        cells[iy] = [ch == OCC_CHAR for ch in row]
    return OccupancyGrid(width, height, resolution, cells)


def world_to_grid(grid: OccupancyGrid, x: float, y: float) -> tuple[int, int]:
    """World position to containing cell index; BoundsError outside the grid."""
    if not grid.in_bounds_world(x, y):
        raise BoundsError(f"({x}, {y}) outside grid extent {grid.extent}")
    ix = int((x - grid.origin.x) / grid.resolution)
    iy = int((y - grid.origin.y) / grid.resolution)
    # guard the half-open upper edge against float round-up
    return min(ix, grid.width - 1), min(iy, grid.height - 1)


def grid_to_world(grid: OccupancyGrid, ix: int, iy: int) -> tuple[float, float]:
    """Cell index to the cell-center world position."""
    if not (0 <= ix < grid.width and 0 <= iy < grid.height):
        raise BoundsError(f"cell ({ix}, {iy}) outside {grid.width}x{grid.height} grid")
    return (grid.origin.x + (ix + 0.5) * grid.resolution,
            grid.origin.y + (iy + 0.5) * grid.resolution)


CONTROLLER_KINDS = ("linear", "move_and_stop", "circular", "run_to_point", "idle")
SUCCESS_RULES = ("reach-goal", "detect-blockage-and-abort")
PREDICT_SERVICES = ("behind", "goal", "none")
MAX_HUMAN_SPEED = 2.0


@dataclass(frozen=True)
class ControllerSpec:
    """Scripted human motion: kind plus kind-specific parameters."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in CONTROLLER_KINDS:
            raise ScenarioError(f"unknown controller kind {self.kind!r}")
        speed = float(self.params.get("speed", 0.0))
        if not (0.0 <= speed <= MAX_HUMAN_SPEED):
            raise ScenarioError(f"human speed {speed} outside [0, {MAX_HUMAN_SPEED}]")
        if self.kind == "circular" and float(self.params.get("circle_radius", 0.0)) <= 0:
            raise ScenarioError("circular controller needs circle_radius > 0")
        if self.kind == "run_to_point" and "target" not in self.params:
            raise ScenarioError("run_to_point controller needs a target")


@dataclass(frozen=True)
class HumanSpec:
    id: str
    start: Pose2D
    controller: ControllerSpec
    radius: float = 0.3


@dataclass(frozen=True)
class PredictionSpec:
    service: str = "none"            # DualBand service: behind | goal | none
    goals: tuple[Pose2D, ...] = ()
    external: bool = False
    external_paths: dict[str, tuple[Pose2D, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.service not in PREDICT_SERVICES:
            raise ScenarioError(f"unknown prediction service {self.service!r}")
        if self.service == "goal" and not self.goals:
            raise ScenarioError("goal prediction needs a non-empty candidate list")
        if self.external_paths and not self.external:
            raise ScenarioError("external paths supplied but overlay disabled")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    map_name: str
    grid: OccupancyGrid
    robot_start: Pose2D
    robot_goal: Pose2D
    robot_radius: float
    humans: tuple[HumanSpec, ...]
    prediction: PredictionSpec
    time_limit_s: float
    success_rule: str
    raw: dict[str, Any] = field(default_factory=dict, repr=False)


def _parse_pose(value: Any, what: str) -> Pose2D:
    if (not isinstance(value, (list, tuple))) or len(value) != 3:
        raise ScenarioError(f"{what} must be [x, y, heading], got {value!r}")
    try:
        return Pose2D(float(value[0]), float(value[1]), float(value[2]))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{what} has non-numeric entries: {value!r}") from exc


def _require_free(grid: OccupancyGrid, pose: Pose2D, what: str) -> None:
    try:
        ix, iy = world_to_grid(grid, pose.x, pose.y)
    except BoundsError as exc:
        raise ScenarioError(f"{what} at ({pose.x}, {pose.y}) is off the map") from exc
    if grid.occupied_at(ix, iy):
        raise ScenarioError(f"{what} at ({pose.x}, {pose.y}) is inside an obstacle")


def _circular_start(ctrl: ControllerSpec) -> Pose2D:
    cx, cy = (float(v) for v in ctrl.params["center"])
    radius = float(ctrl.params["circle_radius"])
    phase = float(ctrl.params.get("phase", 0.0))
    ccw = bool(ctrl.params.get("ccw", True))
    tangent = phase + (math.pi / 2.0 if ccw else -math.pi / 2.0)
    return Pose2D(cx + radius * math.cos(phase), cy + radius * math.sin(phase), tangent)


def load_scenario(
    text: str,
    *,
    base_dir: str | None = None,
    maps: Mapping[str, str] | None = None,
    name: str | None = None,
) -> ScenarioSpec:
    """Parse and validate a scenario JSON document.

    The referenced map is looked up in ``maps`` (name -> map text) when
    given, otherwise read from ``base_dir``.  Every pose is checked
    against the loaded grid.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario root must be a JSON object")
    for key in ("map", "robot"):
        if key not in doc:
            raise ScenarioError(f"scenario missing required key {key!r}")

    map_name = doc["map"]
    if maps is not None and map_name in maps:
        map_text = maps[map_name]
    else:
        if base_dir is None:
            raise ScenarioError(f"cannot resolve map {map_name!r} without base_dir")
        import os
        with open(os.path.join(base_dir, map_name), "r", encoding="utf-8") as fh:
            map_text = fh.read()
    grid = load_map(map_text)

    robot = doc["robot"]
    if not isinstance(robot, dict):
        raise ScenarioError("'robot' must be an object")
    start = _parse_pose(robot.get("start"), "robot start")
    goal = _parse_pose(robot.get("goal"), "robot goal")
    robot_radius = float(robot.get("radius", 0.3))
    _require_free(grid, start, "robot start")
    _require_free(grid, goal, "robot goal")

    humans: list[HumanSpec] = []
    seen_ids: set[str] = set()
    for h in doc.get("humans", []):
        if "id" not in h or "controller" not in h:
            raise ScenarioError("each human needs 'id' and 'controller'")
        hid = str(h["id"])
        if hid in seen_ids:
            raise ScenarioError(f"duplicate human id {hid!r}")
        seen_ids.add(hid)
        cdoc = h["controller"]
        if not isinstance(cdoc, dict) or "kind" not in cdoc:
            raise ScenarioError(f"human {hid!r} controller needs a 'kind'")
        ctrl = ControllerSpec(cdoc["kind"], {k: v for k, v in cdoc.items() if k != "kind"})
        if ctrl.kind == "circular":
            if "center" not in ctrl.params:
                raise ScenarioError(f"human {hid!r}: circular controller needs a center")
            hstart = _circular_start(ctrl)
        else:
            hstart = _parse_pose(h.get("start"), f"human {hid!r} start")
        _require_free(grid, hstart, f"human {hid!r} start")
        humans.append(HumanSpec(hid, hstart, ctrl, float(h.get("radius", 0.3))))

    pdoc = doc.get("prediction", {})
    goals = tuple(_parse_pose(g, "prediction goal") for g in pdoc.get("goals", []))
    for g in goals:
        _require_free(grid, g, "prediction goal")
    external_paths = {
        str(hid): tuple(_parse_pose(p, "external path pose") for p in path)
        for hid, path in pdoc.get("external_paths", {}).items()
    }
    prediction = PredictionSpec(
        service=pdoc.get("service", "none"),
        goals=goals,
        external=bool(pdoc.get("external", False)),
        external_paths=external_paths,
    )

    time_limit = float(doc.get("time_limit_s", 60.0))
    if time_limit <= 0:
        raise ScenarioError("time_limit_s must be positive")
    rule = doc.get("success_rule", "reach-goal")
    if rule not in SUCCESS_RULES:
        raise ScenarioError(f"unknown success_rule {rule!r}")

    return ScenarioSpec(
        name=name or str(doc.get("name", "scenario")),
        map_name=str(map_name),
        grid=grid,
        robot_start=start,
        robot_goal=goal,
        robot_radius=robot_radius,
        humans=tuple(humans),
        prediction=prediction,
        time_limit_s=time_limit,
        success_rule=rule,
        raw=doc,
    )
