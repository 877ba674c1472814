"""Ground plane selection from scene wording.

The ground is a flat quad under the scene.  Its material is picked from
keywords in the scene description unless the scene graph carries an
explicit ground hint, which always wins.  Unmatched descriptions default
to grass.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass


class GroundKind(enum.Enum):
    GRASS = "grass"
    WOOD = "wood"
    SAND = "sand"


@dataclass(slots=True)
class GroundPlane:
    kind: GroundKind
    height: float
    extent: float


GROUND_COLORS: dict[GroundKind, tuple[float, float, float]] = {
    GroundKind.GRASS: (0.36, 0.55, 0.27),
    GroundKind.WOOD: (0.55, 0.40, 0.26),
    GroundKind.SAND: (0.80, 0.72, 0.52),
}

# Priority order on tied keyword counts: grass, then wood, then sand.
_KEYWORDS: tuple[tuple[GroundKind, tuple[str, ...]], ...] = (
    (GroundKind.GRASS, ("grass", "grassy", "field", "garden", "lawn", "meadow", "park", "forest")),
    (GroundKind.WOOD, ("wood", "wooden", "floor", "indoor", "indoors", "desk", "room", "office", "kitchen")),
    (GroundKind.SAND, ("sand", "sandy", "beach", "desert", "dune", "shore")),
)


def select_ground(description: str, hint: str | None = None, height: float = 0.0, extent: float = 12.0) -> GroundPlane:
    """Pick the ground material for a scene.

    An explicit hint token ('grass'|'wood'|'sand') overrides keyword
    matching.  Otherwise each keyword occurrence in the description votes
    for its material; the highest count wins and ties fall back to the
    priority order grass, wood, sand.
    """
    if hint is not None:
        return GroundPlane(kind=GroundKind(hint), height=height, extent=extent)
    words = re.findall(r"[a-z]+", description.casefold())
    best = GroundKind.GRASS
    best_count = 0
    for kind, keys in _KEYWORDS:
        count = sum(1 for w in words if w in keys)
        if count > best_count:
            best = kind
            best_count = count
    return GroundPlane(kind=best, height=height, extent=extent)
