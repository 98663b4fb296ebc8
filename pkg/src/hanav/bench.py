"""Benchmark layer: per-run metrics, the suite runner, and reporting.

Metrics follow the comparison protocol: success rate (acc), executed
path length (pl), total episode time (tt), and minimum human-robot
distance (hrd, forced to zero whenever a collision happened).  A failed
baseline run substitutes the static global-path length for the executed
path length.  Runs are paired across planners by seed so both face the
same jittered human trajectories.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent import futures
from dataclasses import dataclass, field

from .config import PlannerConfig
from .costmap import build_stack, inflate
from .global_plan import NoPathError, PlanInputError, plan_global
from .sim import PLANNER_IDS, run_episode
from .trace import Trace
from .world import ScenarioSpec

__all__ = [
    "MetricsError", "UsageError", "RunMetrics", "MeanRow", "MetricsReport",
    "compute_metrics", "run_suite", "render_report", "parse_report_csv",
    "plot_trace", "REPORT_COLUMNS",
]

REPORT_COLUMNS = ("scenario", "planner", "acc", "pl", "tt", "hrd")


class MetricsError(Exception):
    """Trace is unusable for metric computation."""


class UsageError(ValueError):
    """Bad report format or malformed report file."""


@dataclass(frozen=True)
class RunMetrics:
    """Metrics of a single episode."""

    scenario: str
    planner: str
    seed: int
    outcome: str
    success: bool
    pl: float
    tt: float
    hrd: float | None            # None when the scenario has no humans
    collided: bool
    errored: bool = False
    error: str = ""


@dataclass(frozen=True)
class MeanRow:
    """Per-(scenario, planner) means over repeats."""

    scenario: str
    planner: str
    acc: float
    pl: float
    tt: float
    hrd: float | None
    runs: int = 0
    errored: int = 0


@dataclass
class MetricsReport:
    """Per-run rows plus (possibly precomputed) per-scenario means."""

    rows: list[RunMetrics] = field(default_factory=list)
    mean_rows: list[MeanRow] | None = None

    def means(self) -> list[MeanRow]:
        if self.mean_rows is not None:
            return list(self.mean_rows)
        groups: dict[tuple[str, str], list[RunMetrics]] = {}
        order: list[tuple[str, str]] = []
        for row in self.rows:
            key = (row.scenario, row.planner)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(row)
        out = []
        for key in order:
            rows = groups[key]
            ok = [r for r in rows if not r.errored]
            n_err = len(rows) - len(ok)
            if not ok:
                out.append(MeanRow(key[0], key[1], 0.0, math.nan, math.nan,
                                   None, 0, n_err))
                continue
            hrds = [r.hrd for r in ok if r.hrd is not None]
            out.append(MeanRow(
                scenario=key[0], planner=key[1],
                acc=100.0 * sum(r.success for r in ok) / len(ok),
                pl=sum(r.pl for r in ok) / len(ok),
                tt=sum(r.tt for r in ok) / len(ok),
                hrd=sum(hrds) / len(hrds) if hrds else None,
                runs=len(ok), errored=n_err))
        return out


# ---------------------------------------------------------------------- #
# per-run metrics


def _static_path_length(spec: ScenarioSpec, cfg: PlannerConfig) -> float:
    """Length of the global path on the human-free map, used in place
    of the executed path when a baseline run fails."""
    stack = inflate(build_stack(spec.grid, cfg.costmap), spec.robot_radius)
    try:
        return plan_global(stack, spec.robot_start, spec.robot_goal).length
    except (NoPathError, PlanInputError):
        return 0.0


def compute_metrics(trace: Trace, spec: ScenarioSpec,
                    cfg: PlannerConfig | None = None) -> RunMetrics:
    """Reduce one trace to its metrics row.

    Success follows the scenario's rule: reaching the goal, or (for
    blocked-corridor scenarios) detecting the blockage and aborting.
    Either way a collision disqualifies the run and zeroes hrd.
    """
    if not trace.header or not trace.footer or not trace.steps:
        raise MetricsError("trace is truncated")
    outcome = trace.footer.get("outcome")
    if outcome is None:
        raise MetricsError("trace footer lacks an outcome")
    cfg = cfg or PlannerConfig()
    planner = trace.header.get("planner", "")

    pts = [step["robot"][:2] for step in trace.steps]
    final = trace.footer.get("final_robot")
    if final:
        pts.append(final[:2])
    pl = sum(math.hypot(b[0] - a[0], b[1] - a[1])
             for a, b in zip(pts, pts[1:]))
    tt = float(trace.footer.get("t_end", 0.0))

    collided = bool(trace.footer.get("collisions")) or outcome == "collision"
    if spec.success_rule == "detect-blockage-and-abort":
        success = outcome == "abort" and not collided
    else:
        success = outcome == "success" and not collided

    hrd: float | None = None
    saw_human = False
    for step in trace.steps:
        rx, ry = step["robot"][0], step["robot"][1]
        for h in step.get("humans", []):
            saw_human = True
            d = math.hypot(h["pose"][0] - rx, h["pose"][1] - ry)
            hrd = d if hrd is None else min(hrd, d)
    if not saw_human and spec.humans:
        # humans exist but never entered the records; distance unknown
        hrd = None
    if collided:
        hrd = 0.0

    if planner == "baseline" and not success:
        pl = _static_path_length(spec, cfg)

    return RunMetrics(
        scenario=trace.header.get("scenario", spec.name or ""),
        planner=planner, seed=int(trace.header.get("seed", -1)),
        outcome=outcome, success=success, pl=pl, tt=tt, hrd=hrd,
        collided=collided)


# ---------------------------------------------------------------------- #
# suite runner


def _run_one(task) -> RunMetrics:
    spec, planner_id, seed, dt, cfg, trace_path = task
    try:
        trace = run_episode(spec, planner_id, seed=seed, dt=dt, cfg=cfg)
        if trace_path:
            trace.save(trace_path)
        return compute_metrics(trace, spec, cfg)
    except Exception as exc:            # noqa: BLE001 - suite must survive
        return RunMetrics(scenario=spec.name or "", planner=planner_id,
                          seed=seed, outcome="error", success=False,
                          pl=math.nan, tt=math.nan, hrd=None, collided=False,
                          errored=True, error=f"{type(exc).__name__}: {exc}")


def run_suite(specs: list[ScenarioSpec], planners=PLANNER_IDS,
              repeats: int = 10, base_seed: int = 0, dt: float = 0.1,
              cfg: PlannerConfig | None = None, jobs: int = 1,
              trace_dir: str | None = None,
              progress=None) -> MetricsReport:
    """Run every (scenario, planner, repeat) episode and collect metrics.

    Repeat k uses seed ``base_seed + k`` for every scenario and planner,
    so paired runs consume identical human trajectories.  A crashed
    episode becomes an errored row; the suite continues.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    planners = tuple(planners)
    for p in planners:
        if p not in PLANNER_IDS:
            raise ValueError(f"unknown planner {p!r}")
    if not specs:
        raise ValueError("suite is empty")
    cfg = cfg or PlannerConfig()

    tasks = []
    for spec in specs:
        for planner in planners:
            for rep in range(repeats):
                seed = base_seed + rep
                path = None
                if trace_dir:
                    path = os.path.join(
                        trace_dir, f"{spec.name}__{planner}__{seed}.jsonl")
                tasks.append((spec, planner, seed, dt, cfg, path))

    rows: list[RunMetrics] = []
    if jobs > 1:
        with futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, row in enumerate(pool.map(_run_one, tasks)):
                rows.append(row)
                if progress:
                    progress(i + 1, len(tasks), row)
    else:
        for i, task in enumerate(tasks):
            row = _run_one(task)
            rows.append(row)
            if progress:
                progress(i + 1, len(tasks), row)
    return MetricsReport(rows=rows)


# ---------------------------------------------------------------------- #
# rendering


def _fmt(value, kind: str) -> str:
    if kind == "acc":
        return f"{value:.1f}"
    if value is None:
        return "n/a"
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return f"{value:.3f}"


def render_report(report: MetricsReport, fmt: str = "table") -> str:
    """Emit the per-scenario means as CSV or an aligned text table."""
    means = report.means()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for m in means:
            writer.writerow([m.scenario, m.planner, _fmt(m.acc, "acc"),
                             _fmt(m.pl, "pl"), _fmt(m.tt, "tt"),
                             _fmt(m.hrd, "hrd")])
        return buf.getvalue()
    if fmt == "table":
        head = list(REPORT_COLUMNS)
        body = [[m.scenario, m.planner, _fmt(m.acc, "acc"), _fmt(m.pl, "pl"),
                 _fmt(m.tt, "tt"), _fmt(m.hrd, "hrd")] for m in means]
        widths = [max(len(row[i]) for row in [head] + body)
                  for i in range(len(head))]
        lines = []
        for row in [head] + body:
            cells = [row[0].ljust(widths[0]), row[1].ljust(widths[1])]
            cells += [row[i].rjust(widths[i]) for i in range(2, len(head))]
            lines.append("  ".join(cells).rstrip())
        return "\n".join(lines) + "\n"
    raise UsageError(f"unknown report format {fmt!r}")


def runs_csv(report: MetricsReport) -> str:
    """Per-run rows as CSV, one line per episode."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scenario", "planner", "seed", "outcome", "success",
                     "pl", "tt", "hrd", "errored", "error"])
    for r in report.rows:
        writer.writerow([r.scenario, r.planner, r.seed, r.outcome,
                         int(r.success), _fmt(r.pl, "pl"), _fmt(r.tt, "tt"),
                         _fmt(r.hrd, "hrd"), int(r.errored), r.error])
    return buf.getvalue()


def parse_report_csv(text: str) -> MetricsReport:
    """Read back a means CSV produced by render_report."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise UsageError("report file is empty") from None
    if [h.strip() for h in header] != list(REPORT_COLUMNS):
        raise UsageError("report header does not match "
                         + ",".join(REPORT_COLUMNS))
    means = []
    for ln, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(REPORT_COLUMNS):
            raise UsageError(f"line {ln}: expected {len(REPORT_COLUMNS)} columns")
        try:
            hrd = None if row[5] == "n/a" else float(row[5])
            means.append(MeanRow(scenario=row[0], planner=row[1],
                                 acc=float(row[2]), pl=float(row[3]),
                                 tt=float(row[4]), hrd=hrd))
        except ValueError as exc:
            raise UsageError(f"line {ln}: {exc}") from None
    return MetricsReport(mean_rows=means)


# ---------------------------------------------------------------------- #
# trace plot


MODE_COLORS = {
    "single_band": "#2e7d32",
    "dual_band": "#ef6c00",
    "vel_obs": "#6a1b9a",
    "backoff_recovery": "#c62828",
    "baseline": "#1565c0",
}

_HUMAN_COLORS = ("#607d8b", "#8d6e63", "#00838f", "#9e9d24", "#5e35b1",
                 "#d81b60", "#3949ab", "#f9a825", "#455a64", "#6d4c41")


def plot_trace(trace: Trace, spec: ScenarioSpec, scale: float = 60.0) -> str:
    """Overhead SVG: map, mode-colored robot trail, human paths."""
    grid = spec.grid
    res = grid.resolution
    w_px = grid.width * res * scale
    h_px = grid.height * res * scale

    def sx(x: float) -> float:
        return x * scale

    def sy(y: float) -> float:
        return h_px - y * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w_px:.0f}" '
        f'height="{h_px:.0f}" viewBox="0 0 {w_px:.2f} {h_px:.2f}">',
        f'<rect width="{w_px:.2f}" height="{h_px:.2f}" fill="#fafafa"/>',
    ]
    # occupied cells, merged into horizontal runs
    cells = grid.cells
    for iy in range(grid.height):
        ix = 0
        while ix < grid.width:
            if not cells[iy, ix]:
                ix += 1
                continue
            j = ix
            while j < grid.width and cells[iy, j]:
                j += 1
            x0, y0 = sx(ix * res), sy((iy + 1) * res)
            parts.append(
                f'<rect x="{x0:.2f}" y="{y0:.2f}" '
                f'width="{(j - ix) * res * scale:.2f}" '
                f'height="{res * scale:.2f}" fill="#263238"/>')
            ix = j

    def polyline(points, color, width, dash=""):
        if len(points) < 2:
            return
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in points)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="{width:.2f}"{extra}/>')

    # human paths
    human_pts: dict[str, list[tuple[float, float]]] = {}
    for step in trace.steps:
        for h in step.get("humans", []):
            human_pts.setdefault(h["id"], []).append(
                (h["pose"][0], h["pose"][1]))
    for i, (hid, pts) in enumerate(sorted(human_pts.items())):
        color = _HUMAN_COLORS[i % len(_HUMAN_COLORS)]
        polyline(pts, color, 1.5, dash="4,3")
        fx, fy = pts[-1]
        parts.append(f'<circle cx="{sx(fx):.2f}" cy="{sy(fy):.2f}" '
                     f'r="{0.3 * scale:.2f}" fill="{color}" '
                     f'fill-opacity="0.65"/>')

    # robot trail, one polyline per contiguous mode stretch
    steps = trace.steps
    i = 0
    while i < len(steps):
        mode = steps[i]["mode"]
        j = i
        seg = []
        while j < len(steps) and steps[j]["mode"] == mode:
            seg.append((steps[j]["robot"][0], steps[j]["robot"][1]))
            j += 1
        if j < len(steps):               # join to the next stretch
            seg.append((steps[j]["robot"][0], steps[j]["robot"][1]))
        polyline(seg, MODE_COLORS.get(mode, "#000000"), 2.5)
        i = j
    final = trace.footer.get("final_robot")
    if final:
        parts.append(f'<circle cx="{sx(final[0]):.2f}" cy="{sy(final[1]):.2f}" '
                     f'r="{spec.robot_radius * scale:.2f}" fill="#1b5e20" '
                     f'fill-opacity="0.8"/>')

    # start and goal markers
    st, gl = spec.robot_start, spec.robot_goal
    parts.append(f'<circle cx="{sx(st.x):.2f}" cy="{sy(st.y):.2f}" r="4" '
                 f'fill="none" stroke="#000" stroke-width="1.5"/>')
    parts.append(f'<circle cx="{sx(gl.x):.2f}" cy="{sy(gl.y):.2f}" r="6" '
                 f'fill="none" stroke="#b71c1c" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
