"""Canonical spatial relations and the phrase classifier.

Free-text relation phrases from the DSL ("perched upon", "to the left
of") are normalized to one of twelve canonical relations.  The classifier
here is pure keyword matching; agent-backed classification lives in
``agents`` and falls back to this table.
"""

from __future__ import annotations

import enum


class CanonicalRelation(enum.Enum):
    ON = "on"
    UNDER = "under"
    LEFT = "left"
    RIGHT = "right"
    FRONT = "front"
    BEHIND = "behind"
    FAR = "far"
    NEAR = "near"
    CENTER_ALIGNED = "center-aligned"
    LEANING_ON = "leaning-on"
    FACING = "facing"
    ROTATION = "rotation"


# Relations that place the subject flush against the target's bounding box.
TANGENT_RELATIONS = frozenset(
    {
        CanonicalRelation.ON,
        CanonicalRelation.UNDER,
        CanonicalRelation.LEFT,
        CanonicalRelation.RIGHT,
        CanonicalRelation.FRONT,
        CanonicalRelation.BEHIND,
    }
)

# Word sequences recognized by classify_phrase, keyed by canonical relation.
RELATION_SYNONYMS: dict[CanonicalRelation, tuple[str, ...]] = {
    CanonicalRelation.ON: (
        "on", "onto", "atop", "upon", "above", "on top of", "standing on",
        "sitting on", "perched on", "perched upon", "placed on", "resting on",
        "stacked on",
    ),
    CanonicalRelation.UNDER: (
        "under", "below", "beneath", "underneath", "tucked under",
    ),
    CanonicalRelation.LEFT: (
        "left", "left of", "to the left of", "on the left of",
    ),
    CanonicalRelation.RIGHT: (
        "right", "right of", "to the right of", "on the right of",
    ),
    CanonicalRelation.FRONT: (
        "front", "front of", "in front of", "before",
    ),
    CanonicalRelation.BEHIND: (
        "behind", "in back of", "at the back of", "back of",
    ),
    CanonicalRelation.FAR: (
        "far", "far from", "far away from", "away from", "distant from",
    ),
    CanonicalRelation.NEAR: (
        "near", "nearby", "next to", "close to", "beside", "adjacent to",
    ),
    CanonicalRelation.CENTER_ALIGNED: (
        "center-aligned", "center aligned", "center aligned with",
        "centered on", "centered under", "centered with",
    ),
    CanonicalRelation.LEANING_ON: (
        "leaning-on", "leaning on", "leaning against", "leans on",
        "propped against",
    ),
    CanonicalRelation.FACING: (
        "facing", "faces", "looking at", "turned toward", "turned towards",
    ),
    CanonicalRelation.ROTATION: (
        "rotation", "rotated", "rotated by", "turned by",
    ),
}


def canonical_from_token(token: str) -> CanonicalRelation | None:
    """Strictly parse a canonical relation token ('on', 'center-aligned', ...).

    Underscores and surrounding whitespace are tolerated; anything else
    returns None.
    """
    t = token.strip().casefold().replace("_", "-")
    for rel in CanonicalRelation:
        if t == rel.value:
            return rel
    return None


def _words(phrase: str) -> list[str]:
    cleaned = [ch if (ch.isalnum() or ch in "-' ") else " " for ch in phrase.casefold()]
    return "".join(cleaned).split()


_SYNONYM_INDEX: dict[tuple[str, ...], CanonicalRelation] = {}
for _rel, _phrases in RELATION_SYNONYMS.items():
    for _p in _phrases:
        _SYNONYM_INDEX[tuple(_p.split())] = _rel
_MAX_SYNONYM_WORDS = max(len(k) for k in _SYNONYM_INDEX)


def classify_phrase(phrase: str) -> CanonicalRelation | None:
    """Map a free-text relation phrase to a canonical relation.

    Matches known word sequences inside the phrase, longest match first
    and leftmost on ties ("leaning on" wins over "on").  Returns None
    when nothing matches.
    """
    direct = canonical_from_token(phrase)
    if direct is not None:
        return direct
    words = _words(phrase)
    for n in range(min(_MAX_SYNONYM_WORDS, len(words)), 0, -1):
        for start in range(0, len(words) - n + 1):
            hit = _SYNONYM_INDEX.get(tuple(words[start: start + n]))
            if hit is not None:
                return hit
    return None
