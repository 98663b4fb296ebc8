"""Human-aware navigation planning library and scenario benchmark."""

from .config import (
    BandParams,
    BaselineParams,
    ConfigError,
    CostmapParams,
    HumanLayerParams,
    KinodynamicLimits,
    ObjectiveWeights,
    PlannerConfig,
    PlannerParams,
    SimParams,
)
from .world import (
    BoundsError,
    MapFormatError,
    OccupancyGrid,
    Pose2D,
    ScenarioError,
    ScenarioSpec,
    load_map,
    load_scenario,
    wrap_angle,
)

__all__ = [
    "BandParams", "BaselineParams", "ConfigError", "CostmapParams",
    "HumanLayerParams", "KinodynamicLimits", "ObjectiveWeights",
    "PlannerConfig", "PlannerParams", "SimParams",
    "BoundsError", "MapFormatError", "OccupancyGrid", "Pose2D",
    "ScenarioError", "ScenarioSpec", "load_map", "load_scenario", "wrap_angle",
]

__version__ = "0.1.0"
