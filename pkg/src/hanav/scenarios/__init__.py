"""Packaged scenario library: hospital maps plus one fixture per
benchmark situation, loadable by name."""
from __future__ import annotations

import os

from ..world import ScenarioSpec, load_scenario

__all__ = ["DATA_DIR", "CANON", "QUANTITATIVE", "available",
           "scenario_path", "load_fixture", "load_suite_dir", "load_canon"]

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

# every benchmark situation ships as one fixture
CANON = (
    "visibility",
    "door_wide",
    "door_narrow",
    "bed_approach",
    "corridor_narrow_block",
    "corridor_narrow_stop",
    "corridor_wide_free",
    "corridor_wide_clutter",
    "free_space_crowd",
    "emergency",
)

# the subset used for the quantitative planner comparison
QUANTITATIVE = (
    "bed_approach",
    "corridor_narrow_stop",
    "corridor_wide_free",
    "free_space_crowd",
    "emergency",
)


def available() -> tuple[str, ...]:
    """Names of all packaged scenario fixtures."""
    names = [f[:-5] for f in os.listdir(DATA_DIR) if f.endswith(".json")]
    return tuple(sorted(names))


def scenario_path(name: str) -> str:
    path = os.path.join(DATA_DIR, name + ".json")
    if not os.path.isfile(path):
        raise FileNotFoundError(
            f"no packaged scenario {name!r}; available: {', '.join(available())}")
    return path


def load_fixture(name: str) -> ScenarioSpec:
    """Load one packaged scenario by name."""
    path = scenario_path(name)
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read(), base_dir=DATA_DIR, name=name)


def load_suite_dir(path: str) -> list[ScenarioSpec]:
    """Load every ``*.json`` scenario in a directory, sorted by name."""
    names = sorted(f for f in os.listdir(path) if f.endswith(".json"))
    if not names:
        raise FileNotFoundError(f"no scenario files (*.json) in {path!r}")
    specs = []
    for fname in names:
        with open(os.path.join(path, fname), "r", encoding="utf-8") as fh:
            specs.append(load_scenario(fh.read(), base_dir=path,
                                       name=fname[:-5]))
    return specs


def load_canon() -> list[ScenarioSpec]:
    """The full packaged suite in canonical order."""
    return [load_fixture(name) for name in CANON]
