"""Semantic label taxonomy shared by rasters, BEV maps and the explorer."""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class SemanticClass(IntEnum):
    UNKNOWN = 0
    DA_CENTER = 1
    DA_LEFT = 2
    DA_LEFTLEFT = 3
    DA_RIGHT = 4
    DA_RIGHTRIGHT = 5
    LM_DASHED = 6
    LM_SOLID = 7
    CROSSWALK = 8
    CURB = 9
    STOPLINE = 10


NUM_CLASSES = len(SemanticClass)

DRIVABLE_AREA = (
    SemanticClass.DA_CENTER,
    SemanticClass.DA_LEFT,
    SemanticClass.DA_LEFTLEFT,
    SemanticClass.DA_RIGHT,
    SemanticClass.DA_RIGHTRIGHT,
)
# Cells a particle may legally occupy; dashed lines and crosswalks are crossable.
TRAVERSABLE = DRIVABLE_AREA + (
    SemanticClass.LM_DASHED,
    SemanticClass.CROSSWALK,
    SemanticClass.STOPLINE,
)
BOUNDARY = (SemanticClass.LM_SOLID, SemanticClass.CURB)

# RGB palette; index == class code.
PALETTE: list[tuple[int, int, int]] = [
    (0, 0, 0),
    (30, 90, 255),
    (127, 255, 212),
    (0, 160, 120),
    (255, 170, 60),
    (200, 110, 20),
    (255, 255, 255),
    (255, 230, 0),
    (190, 190, 190),
    (140, 60, 160),
    (255, 40, 40),
]


def _lookup(codes) -> np.ndarray:
    table = np.zeros(NUM_CLASSES, dtype=bool)
    table[list(codes)] = True
    return table


IS_DRIVABLE_AREA = _lookup(DRIVABLE_AREA)
IS_TRAVERSABLE = _lookup(TRAVERSABLE)
IS_BOUNDARY = _lookup(BOUNDARY)
IS_MARKING = _lookup((SemanticClass.LM_DASHED, SemanticClass.LM_SOLID))


def flat_palette() -> list[int]:
    """Palette flattened to the 768-entry list Pillow expects."""
    flat = [c for rgb in PALETTE for c in rgb]
    return flat + [0] * (768 - len(flat))
