#!/usr/bin/env python3
"""Regenerate the ASCII occupancy maps shipped with the scenario library.

The maps are checked in; this script exists so their geometry stays
reviewable and editable as code.  Run from the repository root:

    python scripts/generate_maps.py
"""
from __future__ import annotations

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hanav.world import OccupancyGrid  # noqa: E402

RES = 0.1
DATA_DIR = os.path.join(os.path.dirname(__file__), "..",
                        "src", "hanav", "scenarios", "data")


class Canvas:
    """Mutable cell buffer; OccupancyGrid freezes its cells, so drawing
    happens here and the grid is built at the end."""

    def __init__(self, w_m: float, h_m: float):
        self.w = int(round(w_m / RES))
        self.h = int(round(h_m / RES))
        self.cells = np.zeros((self.h, self.w), dtype=bool)

    def to_grid(self) -> OccupancyGrid:
        return OccupancyGrid(self.w, self.h, RES, self.cells)


def blank(w_m: float, h_m: float) -> Canvas:
    return Canvas(w_m, h_m)


def fill(cv: Canvas, x0: float, y0: float, x1: float, y1: float,
         value: bool = True) -> None:
    """Mark the world-rectangle [x0,x1) x [y0,y1) as occupied (or free)."""
    ix0 = max(0, int(round(x0 / RES)))
    iy0 = max(0, int(round(y0 / RES)))
    ix1 = min(cv.w, int(round(x1 / RES)))
    iy1 = min(cv.h, int(round(y1 / RES)))
    cv.cells[iy0:iy1, ix0:ix1] = value


def border(cv: Canvas, thick: float = 0.2) -> None:
    w_m, h_m = cv.w * RES, cv.h * RES
    fill(cv, 0, 0, w_m, thick)
    fill(cv, 0, h_m - thick, w_m, h_m)
    fill(cv, 0, 0, thick, h_m)
    fill(cv, w_m - thick, 0, w_m, h_m)


def labyrinth() -> Canvas:
    """Two rooms joined by a single-agent-width corridor."""
    g = blank(14.0, 6.0)
    border(g)
    # everything between the rooms is solid except the 1.0 m corridor
    fill(g, 3.8, 0.2, 10.2, 2.5)
    fill(g, 3.8, 3.5, 10.2, 5.8)
    return g


def ed_corridor(clutter: bool) -> Canvas:
    """Wide corridor with two side rooms; optional stretcher row that
    narrows the corridor to a single-agent passage."""
    g = blank(12.0, 7.0)
    border(g)
    # wall between corridor and rooms, with two door gaps
    fill(g, 0.2, 3.6, 11.8, 4.0)
    fill(g, 3.0, 3.6, 4.2, 4.0, value=False)
    fill(g, 6.9, 3.6, 8.1, 4.0, value=False)
    # divider splitting the upper strip into two rooms
    fill(g, 5.4, 4.0, 5.8, 6.8)
    if clutter:
        # stretchers along the lower wall; free passage above is 1.2 m
        fill(g, 2.6, 0.2, 4.4, 2.4)
        fill(g, 5.4, 0.2, 7.2, 2.4)
        fill(g, 8.2, 0.2, 10.0, 2.4)
    return g


def ward_door(gap: float) -> Canvas:
    """Two rooms separated by a wall with one doorway of the given width."""
    g = blank(10.0, 6.0)
    border(g)
    fill(g, 4.8, 0.2, 5.2, 5.8)
    fill(g, 4.8, 3.0 - gap / 2.0, 5.2, 3.0 + gap / 2.0, value=False)
    return g


def icu_room() -> Canvas:
    """Open room with beds along the left and right walls."""
    g = blank(11.0, 9.0)
    border(g)
    for y0 in (1.5, 5.5):
        fill(g, 0.2, y0, 1.1, y0 + 2.0)          # left-wall beds
        fill(g, 9.9, y0, 10.8, y0 + 2.0)         # right-wall beds
    return g


def icu_wall() -> Canvas:
    """Room split by a central wall, with a bed bay along the top wall
    and one bed on the right wall."""
    g = blank(12.0, 9.0)
    border(g)
    fill(g, 5.7, 0.2, 6.1, 5.5)                  # central wall, passage above
    fill(g, 6.6, 6.8, 8.6, 8.8)                  # bay bed (left of the lane)
    fill(g, 9.8, 6.8, 11.8, 8.8)                 # bay bed (right of the lane)
    fill(g, 10.9, 2.5, 11.8, 4.5)                # right-wall bed
    fill(g, 0.2, 6.8, 2.2, 8.8)                  # bed in the left half
    return g


def main() -> None:
    maps = {
        "labyrinth.map": labyrinth(),
        "ed_corridor.map": ed_corridor(clutter=False),
        "ed_corridor_clutter.map": ed_corridor(clutter=True),
        "ward_door_wide.map": ward_door(1.8),
        "ward_door_narrow.map": ward_door(1.0),
        "icu_room.map": icu_room(),
        "icu_wall.map": icu_wall(),
    }
    os.makedirs(DATA_DIR, exist_ok=True)
    for fname, cv in maps.items():
        grid = cv.to_grid()
        path = os.path.join(DATA_DIR, fname)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(grid.render())
        print(f"wrote {os.path.relpath(path)} ({grid.width}x{grid.height})")


if __name__ == "__main__":
    main()
