"""Parameter sets for the planner, costmap, simulator, and benchmark.

Every numeric default lives here so a single key-value config file can
override any of them (see ``load_overrides`` / ``PlannerConfig.with_overrides``).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    """Raised for malformed override files or unknown/ill-typed keys."""


@dataclass(frozen=True)
class ObjectiveWeights:
    """Per-objective weights for the band optimizer."""

    time: float = 1.0
    obstacle: float = 50.0
    kinodynamic: float = 100.0
    human_safety: float = 20.0
    human_visibility: float = 10.0
    agent_separation: float = 50.0

    def as_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class KinodynamicLimits:
    """Velocity and acceleration bounds for one agent."""

    v_max: float = 0.5
    v_min: float = -0.2          # negative allows slow reversing
    omega_max: float = 1.5
    acc_max: float = 0.5
    ang_acc_max: float = 2.0

    def __post_init__(self) -> None:
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ConfigError("v_max and omega_max must be positive")
        if self.v_min > 0:
            raise ConfigError("v_min must be <= 0")
        if self.acc_max <= 0 or self.ang_acc_max <= 0:
            raise ConfigError("acceleration limits must be positive")


@dataclass(frozen=True)
class HumanLayerParams:
    """Gaussian amplitudes/widths for the human safety and visibility layers.

    Amplitudes are in costmap cost units; trajectory-band residuals use
    the same sigmas and cutoffs but normalize the field peak to one.
    """

    safety_amplitude: float = 200.0
    safety_sigma: float = 0.5
    safety_cutoff: float = 1.5
    visibility_amplitude: float = 200.0
    visibility_sigma: float = 0.5
    visibility_cutoff: float = 3.0

    def __post_init__(self) -> None:
        for name in ("safety_amplitude", "safety_sigma", "safety_cutoff",
                     "visibility_amplitude", "visibility_sigma", "visibility_cutoff"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True)
class CostmapParams:
    """Static inflation and planning-cost parameters."""

    inflation_decay: float = 3.0     # 1/m falloff past the inscribed radius
    plan_cost_scale: float = 8.0     # edge-weight multiplier per unit of cell cost
    human_layers: HumanLayerParams = field(default_factory=HumanLayerParams)


@dataclass(frozen=True)
class BandParams:
    """Geometry and penalty margins of the timed elastic band."""

    d_safe: float = 0.4              # min obstacle clearance, robot center to point
    d_agent: float = 0.5             # extra agent-agent clearance beyond summed radii
    dt_ref: float = 0.3              # target time spacing between configs
    dt_hysteresis: float = 0.1       # fractional band around dt_ref for resize
    dt_floor: float = 1e-3           # hard lower bound on any time diff
    min_seg: float = 0.05            # configs closer than this collapse into one
    epsilon: float = 0.05            # hinge margin on distance penalties
    spacing: float = 0.25            # max waypoint spacing at initialization
    init_speed_fraction: float = 0.8  # initial dt assumes this fraction of v_max
    max_configs: int = 60
    lm_damping: float = 1e-4
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)


@dataclass(frozen=True)
class PlannerParams:
    """Mode machine, classification, and recovery behaviour."""

    v_static: float = 0.1            # below this speed a human counts as static
    planning_radius: float = 5.0
    visible_range: float = 10.0
    visible_fov: float = 2.0 * math.pi
    n_crowd: int = 3                 # more moving humans than this forces VelObs
    w_stuck: float = 4.0             # progress window length (s)
    eps_progress: float = 0.1        # progress considered real above this (m)
    backoff_near: float = 2.5        # backoff needs a human closer than this
    v_back: float = 0.15
    t_wait: float = 10.0
    l_back: float = 3.0
    stop_debounce: float = 1.0       # DualBand holds this long after a human stops
    recent_window: float = 30.0      # stopped human still drives VelObs within this
    goal_tolerance: float = 0.25
    local_horizon: float = 3.0       # band covers at most this much global path
    replan_period: float = 4.0
    replan_failures_abort: int = 3
    behind_offset: float = 1.5       # goal offset for the behind-robot prediction
    predict_horizon: float = 4.0
    predict_step: float = 0.25
    opt_iters_init: int = 12         # solver iterations after a band (re)build
    opt_iters_warm: int = 4          # solver iterations on a warm-started band
    human_limits: KinodynamicLimits = field(
        default_factory=lambda: KinodynamicLimits(
            v_max=1.5, v_min=0.0, omega_max=3.0, acc_max=1.0, ang_acc_max=5.0))
    human_nonholo_scale: float = 0.3


@dataclass(frozen=True)
class BaselineParams:
    """Reactive baseline: replanning pure pursuit over inflated obstacles."""

    t_replan: float = 1.0
    lookahead: float = 0.6
    slow_zone: float = 1.0           # clearance below which speed scales down
    heading_gain: float = 2.0


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.1
    imminent_margin: float = 0.1     # warn when gap to contact is below this


@dataclass(frozen=True)
class PlannerConfig:
    """Aggregate of every tunable parameter."""

    costmap: CostmapParams = field(default_factory=CostmapParams)
    band: BandParams = field(default_factory=BandParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    baseline: BaselineParams = field(default_factory=BaselineParams)
    sim: SimParams = field(default_factory=SimParams)
    robot_limits: KinodynamicLimits = field(default_factory=KinodynamicLimits)

    def with_overrides(self, overrides: dict[str, Any]) -> "PlannerConfig":
        """Apply dotted-key overrides, e.g. ``{"band.d_safe": 0.5}``."""
        cfg = self
        for key, value in overrides.items():
            cfg = _apply_override(cfg, key, value)
        return cfg


def _apply_override(obj: Any, dotted: str, value: Any) -> Any:
    head, _, rest = dotted.partition(".")
    if not dataclasses.is_dataclass(obj):
        raise ConfigError(f"cannot descend into {obj!r} with key {dotted!r}")
    names = {f.name: f for f in dataclasses.fields(obj)}
    if head not in names:
        raise ConfigError(f"unknown config key {head!r}")
    current = getattr(obj, head)
    if rest:
        return dataclasses.replace(obj, **{head: _apply_override(current, rest, value)})
    if dataclasses.is_dataclass(current):
        raise ConfigError(f"{dotted!r} names a section, not a value")
    if isinstance(current, bool):
        new = bool(value)
    elif isinstance(current, int) and not isinstance(value, bool):
        new = int(value)
    elif isinstance(current, float):
        new = float(value)
    else:
        raise ConfigError(f"cannot override {dotted!r} with {value!r}")
    return dataclasses.replace(obj, **{head: new})


def parse_overrides(text: str) -> dict[str, Any]:
    """Parse a ``key = value`` override file. '#' starts a comment."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not key or not val:
            raise ConfigError(f"line {lineno}: empty key or value")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            raise ConfigError(f"line {lineno}: bad value {val!r}") from None
    return out


def load_overrides(path: str) -> dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_overrides(fh.read())
