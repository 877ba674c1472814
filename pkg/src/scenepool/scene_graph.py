"""Scene-graph types, the scene DSL parser, and the JSON codec.

The DSL is line oriented.  ``#`` starts a comment (outside double quotes),
blank lines are skipped, and every remaining line is ``directive: value``:

    scene: A bird standing on a chair      (required, must come first)
    ground: grass                          (optional: grass|wood|sand)
    special: duplicate_x_alignment         (optional, default none)
    asset: bird | size=s | desc="a small songbird"
    rel: bird standing on chair

Assets get ids in order of appearance starting at 1.  The scene's core
asset is the second one listed (the first when only one exists): it sits
at the scene origin and takes no ``rel:`` line, while every other asset
needs exactly one.  A relation without an explicit target points at the
core.  ``angle=<deg>`` at the end of a ``rel:`` line stores a rotation
angle for orientation-style relations.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import jsonschema

from scenepool.errors import DslError, SceneGraphError


class Size(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


class SpecialTag(enum.Enum):
    NONE = "none"
    DUPLICATE_X_ALIGNMENT = "duplicate_x_alignment"
    DUPLICATE_Y_ALIGNMENT = "duplicate_y_alignment"
    DUPLICATE_FACING = "duplicate_facing"


_SIZE_TOKENS = {
    "s": Size.SMALL,
    "small": Size.SMALL,
    "m": Size.MEDIUM,
    "medium": Size.MEDIUM,
    "l": Size.LARGE,
    "large": Size.LARGE,
}

GROUND_TOKENS = ("grass", "wood", "sand")


@dataclass(slots=True)
class AssetSpec:
    id: int
    name: str
    enriched_desc: str
    size: Size


@dataclass(slots=True)
class RelationSpec:
    subject: int
    relation: str
    target: int
    angle_deg: float | None = None


@dataclass
class SceneGraph:
    description: str
    assets: list[AssetSpec] = field(default_factory=list)
    relations: list[RelationSpec] = field(default_factory=list)
    special: SpecialTag = SpecialTag.NONE
    ground: str | None = None


def core_asset_id(graph: SceneGraph) -> int:
    """Id of the core asset: the second listed, or the only one."""
    if not graph.assets:
        raise SceneGraphError("scene graph has no assets")
    if len(graph.assets) >= 2:
        return graph.assets[1].id
    return graph.assets[0].id


def _strip_comment(line: str) -> str:
    in_quote = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return line[:i]
    return line


def _parse_asset_line(value: str, lineno: int, next_id: int) -> AssetSpec:
    parts = [p.strip() for p in value.split("|")]
    name = " ".join(parts[0].split())
    if not name:
        raise DslError("asset name is empty", lineno)
    size = Size.MEDIUM
    desc: str | None = None
    for part in parts[1:]:
        if not part:
            raise DslError("empty field in asset line", lineno)
        if part.lower().startswith("size="):
            tok = part[5:].strip().lower()
            if tok not in _SIZE_TOKENS:
                raise DslError(f"unknown size '{tok}' (use s|m|l)", lineno)
            size = _SIZE_TOKENS[tok]
        elif part.startswith("desc="):
            rest = part[5:].strip()
            if len(rest) < 2 or not (rest.startswith('"') and rest.endswith('"')):
                raise DslError("desc value must be double quoted", lineno)
            desc = rest[1:-1]
        else:
            raise DslError(f"unknown asset field '{part.split('=')[0]}'", lineno)
    if desc is None:
        desc = f"a {size.value} {name}"
    return AssetSpec(id=next_id, name=name, enriched_desc=desc, size=size)


def _resolve_relation(
    value: str, lineno: int, name_to_id: dict[str, int], core: int,
) -> RelationSpec:
    tokens = value.split()
    angle: float | None = None
    if tokens and tokens[-1].lower().startswith("angle="):
        try:
            angle = float(tokens[-1][6:])
        except ValueError:
            raise DslError(f"bad angle value '{tokens[-1][6:]}'", lineno) from None
        tokens = tokens[:-1]

    # Subject: longest name-matching prefix (asset names may contain spaces).
    subject = None
    used = 0
    for k in range(len(tokens), 0, -1):
        cand = " ".join(tokens[:k]).casefold()
        if cand in name_to_id:
            subject = name_to_id[cand]
            used = k
            break
    if subject is None:
        raise DslError(f"relation subject is not a declared asset: '{value}'", lineno)
    rest = tokens[used:]

    # Target: longest name-matching suffix, leaving at least one phrase token.
    target = None
    taken = 0
    for k in range(len(rest) - 1, 0, -1):
        cand = " ".join(rest[len(rest) - k:]).casefold()
        if cand in name_to_id:
            target = name_to_id[cand]
            taken = k
            break
    phrase = " ".join(rest[: len(rest) - taken])
    if not phrase:
        raise DslError("relation phrase is empty", lineno)
    if target is None:
        target = core
    if subject == core:
        raise DslError("the core asset takes no relation", lineno)
    if subject == target:
        raise DslError("relation subject and target are the same asset", lineno)
    return RelationSpec(subject=subject, relation=phrase, target=target, angle_deg=angle)


def parse_dsl(text: str) -> SceneGraph:
    """Parse DSL text into a SceneGraph.

    Raises DslError (with the offending line number) on any syntax or
    structural problem; a graph returned here always passes
    validate_graph.
    """
    entries: list[tuple[int, str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        head, sep, value = line.partition(":")
        if not sep:
            raise DslError("expected 'directive: value'", lineno)
        entries.append((lineno, head.strip().lower(), value.strip()))

    if not entries:
        raise DslError("the scene description is empty")
    if entries[0][1] != "scene":
        raise DslError("the first directive must be 'scene:'", entries[0][0])

    description: str | None = None
    ground: str | None = None
    special = SpecialTag.NONE
    special_seen = False
    assets: list[AssetSpec] = []
    raw_rels: list[tuple[int, str]] = []

    for lineno, directive, value in entries:
        if directive == "scene":
            if description is not None:
                raise DslError("duplicate 'scene:' line", lineno)
            if not value:
                raise DslError("scene description is empty", lineno)
            description = value
        elif directive == "ground":
            if ground is not None:
                raise DslError("duplicate 'ground:' line", lineno)
            tok = value.lower()
            if tok not in GROUND_TOKENS:
                raise DslError(f"unknown ground '{tok}' (use grass|wood|sand)", lineno)
            ground = tok
        elif directive == "special":
            if special_seen:
                raise DslError("duplicate 'special:' line", lineno)
            try:
                special = SpecialTag(value.lower())
            except ValueError:
                raise DslError(f"unknown special tag '{value}'", lineno) from None
            special_seen = True
        elif directive == "asset":
            spec = _parse_asset_line(value, lineno, len(assets) + 1)
            if any(a.name.casefold() == spec.name.casefold() for a in assets):
                raise DslError(f"duplicate asset name '{spec.name}'", lineno)
            assets.append(spec)
        elif directive == "rel":
            raw_rels.append((lineno, value))
        else:
            raise DslError(f"unknown directive '{directive}'", lineno)

    if not assets:
        raise DslError("the scene declares no assets")

    name_to_id = {a.name.casefold(): a.id for a in assets}
    core = assets[1].id if len(assets) >= 2 else assets[0].id

    by_subject: dict[int, RelationSpec] = {}
    for lineno, value in raw_rels:
        rel = _resolve_relation(value, lineno, name_to_id, core)
        if rel.subject in by_subject:
            raise DslError(
                f"asset '{assets[rel.subject - 1].name}' has more than one relation", lineno,
            )
        by_subject[rel.subject] = rel
    for a in assets:
        if a.id != core and a.id not in by_subject:
            raise DslError(f"asset '{a.name}' has no relation")

    return SceneGraph(
        description=description,
        assets=assets,
        relations=[by_subject[a.id] for a in assets if a.id in by_subject],
        special=special,
        ground=ground,
    )


def validate_graph(graph: SceneGraph) -> list[str]:
    """Return a list of invariant violations (empty means valid)."""
    problems: list[str] = []
    if not graph.description:
        problems.append("description is empty")
    if not graph.assets:
        problems.append("scene graph has no assets")
        return problems

    n = len(graph.assets)
    if [a.id for a in graph.assets] != list(range(1, n + 1)):
        problems.append("asset ids must be 1..n in listing order")
    seen: set[str] = set()
    for a in graph.assets:
        if not a.name:
            problems.append(f"asset {a.id} has an empty name")
        key = a.name.casefold()
        if key in seen:
            problems.append(f"duplicate asset name '{a.name}'")
        seen.add(key)

    ids = {a.id for a in graph.assets}
    core = core_asset_id(graph)
    subjects: list[int] = []
    for i, r in enumerate(graph.relations):
        where = f"relation {i}"
        if r.subject not in ids:
            problems.append(f"{where}: unknown subject id {r.subject}")
            continue
        if r.target not in ids:
            problems.append(f"{where}: unknown target id {r.target}")
            continue
        if r.subject == r.target:
            problems.append(f"{where}: subject and target are the same asset")
        if r.subject == core:
            problems.append(f"{where}: the core asset must not be a relation subject")
        if not r.relation:
            problems.append(f"{where}: relation phrase is empty")
        if r.angle_deg is not None and not (r.angle_deg == r.angle_deg and abs(r.angle_deg) < 1e9):
            problems.append(f"{where}: angle_deg is not a finite number")
        subjects.append(r.subject)
    for s in set(subjects):
        if subjects.count(s) > 1:
            problems.append(f"asset id {s} has more than one relation")
    for a in graph.assets:
        if a.id != core and a.id not in subjects:
            problems.append(f"asset '{a.name}' has no relation")
    if graph.ground is not None and graph.ground not in GROUND_TOKENS:
        problems.append(f"unknown ground '{graph.ground}'")
    return problems


SCENE_GRAPH_SCHEMA: dict = {
    "type": "object",
    "required": ["description", "assets", "relations", "special"],
    "additionalProperties": False,
    "properties": {
        "description": {"type": "string", "minLength": 1},
        "assets": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "name", "enriched_desc", "size"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "name": {"type": "string", "minLength": 1},
                    "enriched_desc": {"type": "string"},
                    "size": {"enum": [s.value for s in Size]},
                },
            },
        },
        "relations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["subject", "relation", "target"],
                "additionalProperties": False,
                "properties": {
                    "subject": {"type": "integer", "minimum": 1},
                    "relation": {"type": "string", "minLength": 1},
                    "target": {"type": "integer", "minimum": 1},
                    "angle_deg": {"type": "number"},
                },
            },
        },
        "special": {"enum": [t.value for t in SpecialTag]},
        "ground": {"enum": list(GROUND_TOKENS)},
    },
}


def graph_to_json(graph: SceneGraph) -> dict:
    """Serialize to the scene-graph JSON shape (plain dict, sorted relations)."""
    doc: dict = {
        "description": graph.description,
        "assets": [
            {"id": a.id, "name": a.name, "enriched_desc": a.enriched_desc, "size": a.size.value}
            for a in graph.assets
        ],
        "relations": [],
        "special": graph.special.value,
    }
    for r in sorted(graph.relations, key=lambda r: r.subject):
        item: dict = {"subject": r.subject, "relation": r.relation, "target": r.target}
        if r.angle_deg is not None:
            item["angle_deg"] = r.angle_deg
        doc["relations"].append(item)
    if graph.ground is not None:
        doc["ground"] = graph.ground
    return doc


def graph_from_json(data: dict) -> SceneGraph:
    """Build a SceneGraph from a JSON document, enforcing every invariant."""
    try:
        jsonschema.validate(data, SCENE_GRAPH_SCHEMA)
    except jsonschema.ValidationError as e:
        raise SceneGraphError(f"{e.json_path}: {e.message}") from None
    graph = SceneGraph(
        description=data["description"],
        assets=[
            AssetSpec(
                id=a["id"],
                name=a["name"],
                enriched_desc=a["enriched_desc"],
                size=Size(a["size"]),
            )
            for a in data["assets"]
        ],
        relations=[
            RelationSpec(
                subject=r["subject"],
                relation=r["relation"],
                target=r["target"],
                angle_deg=r.get("angle_deg"),
            )
            for r in data["relations"]
        ],
        special=SpecialTag(data["special"]),
        ground=data.get("ground"),
    )
    problems = validate_graph(graph)
    if problems:
        raise SceneGraphError("; ".join(problems))
    return graph


def dump_graph(graph: SceneGraph) -> str:
    return json.dumps(graph_to_json(graph), indent=2, sort_keys=False) + "\n"


def load_graph(text: str) -> SceneGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneGraphError(f"not valid JSON: {e}") from None
    return graph_from_json(data)
