"""Stage-1 layout: relation canonicalization, coarse placement, the magnet.

Placement happens in passes over a shared "pool" of placed assets:

1. scale_assets turns scene-graph entries into placed assets (normalized
   mesh x size-class scale) at the origin.
2. coarse_place puts the core asset at the scene origin and solves every
   relation as a bounding-box constraint against its target.  Multiple
   assets with the same relation and target are staggered along the
   relation's free horizontal axis so they never start interpenetrating.
3. run_magnet pulls nearly-touching related pairs into contact: nearest
   points between decimated contours, child translated by lambda times
   the gap vector, with a bisection guard so a step never creates more
   than d_thresh of new bounding-box penetration.
4. apply_special duplicates the whole arrangement for the duplicate_*
   scene tags.

Only translations (plus the relation-owned yaw/tilt) are ever applied;
meshes stay immutable.  Every asset keeps the translation coarse
placement gave it as its ``anchor`` so the supervisor can measure drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scenepool import agents
from scenepool.assets import PlacedAsset, Tilt
from scenepool.errors import LayoutError
from scenepool.geometry import (
    Aabb,
    compute_aabb,
    extract_contour,
    mesh_soup,
    nearest_pair,
    penetration_depth,
)
from scenepool.relations import CanonicalRelation
from scenepool.scene_graph import SceneGraph, core_asset_id

# Relations the magnet is allowed to tighten (side/top contact makes sense).
MAGNET_RELATIONS = frozenset(
    {
        CanonicalRelation.ON,
        CanonicalRelation.LEFT,
        CanonicalRelation.RIGHT,
        CanonicalRelation.FRONT,
        CanonicalRelation.BEHIND,
        CanonicalRelation.LEANING_ON,
    }
)

# Free horizontal axis used to stagger same-relation siblings: 0 = x, 1 = y.
_STAGGER_AXIS = {
    CanonicalRelation.ON: 0,
    CanonicalRelation.UNDER: 0,
    CanonicalRelation.CENTER_ALIGNED: 0,
    CanonicalRelation.FRONT: 0,
    CanonicalRelation.BEHIND: 0,
    CanonicalRelation.FACING: 0,
    CanonicalRelation.LEFT: 1,
    CanonicalRelation.RIGHT: 1,
    CanonicalRelation.FAR: 1,
    CanonicalRelation.NEAR: 1,
    CanonicalRelation.LEANING_ON: 1,
    CanonicalRelation.ROTATION: 1,
}

_DEFAULT_SIZE_SCALE = {"small": 0.5, "medium": 1.0, "large": 2.0}


@dataclass
class PoolConfig:
    """Tunables for placement and the magnet (JSON key 'lambda' maps to lam)."""

    size_scale: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_SIZE_SCALE))
    margin: float = 0.1
    far_gap: float = 2.0
    near_gap: float = 0.25
    lean_tilt_deg: float = 15.0
    d_thresh: float = 0.01
    lam: float = 1.0
    magnet_max_iters: int = 8
    cell_size: float = 0.05
    merge_eps: float = 1e-6

    def __post_init__(self):
        for key in _DEFAULT_SIZE_SCALE:
            if key not in self.size_scale or self.size_scale[key] <= 0:
                raise LayoutError(f"size_scale must give a positive factor for '{key}'")
        if not (0.0 < self.lam <= 1.0):
            raise LayoutError("lambda must be in (0, 1]")
        if self.d_thresh <= 0 or self.cell_size <= 0 or self.merge_eps <= 0:
            raise LayoutError("d_thresh, cell_size and merge_eps must be positive")
        if self.margin < 0 or self.far_gap < 0 or self.near_gap < 0:
            raise LayoutError("margin and gap factors must be non-negative")
        if self.magnet_max_iters < 0:
            raise LayoutError("magnet_max_iters must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "PoolConfig":
        kwargs = {}
        known = {
            "size_scale", "margin", "far_gap", "near_gap", "lean_tilt_deg",
            "d_thresh", "lambda", "magnet_max_iters", "cell_size", "merge_eps",
        }
        for key, value in data.items():
            if key not in known:
                raise LayoutError(f"unknown pool config key '{key}'")
            kwargs["lam" if key == "lambda" else key] = value
        if "size_scale" in kwargs:
            merged = dict(_DEFAULT_SIZE_SCALE)
            merged.update(kwargs["size_scale"])
            kwargs["size_scale"] = merged
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "size_scale": dict(self.size_scale),
            "margin": self.margin,
            "far_gap": self.far_gap,
            "near_gap": self.near_gap,
            "lean_tilt_deg": self.lean_tilt_deg,
            "d_thresh": self.d_thresh,
            "lambda": self.lam,
            "magnet_max_iters": self.magnet_max_iters,
            "cell_size": self.cell_size,
            "merge_eps": self.merge_eps,
        }


@dataclass
class Layout:
    """Placed assets plus the graph they came from."""

    assets: list[PlacedAsset]
    graph: SceneGraph
    provenance: str = "coarse"

    def by_id(self, spec_id: int) -> PlacedAsset:
        for a in self.assets:
            if a.spec_id == spec_id:
                return a
        raise LayoutError(f"no placed asset with id {spec_id}")

    def copy(self) -> "Layout":
        return Layout(
            assets=[a.copy() for a in self.assets],
            graph=self.graph,
            provenance=self.provenance,
        )


def canonicalize_graph(
    graph: SceneGraph, client: agents.AgentClient | None = None,
) -> dict[int, CanonicalRelation]:
    """Resolve every relation phrase to a canonical relation, in place.

    Relation strings in the graph are rewritten to canonical tokens so the
    serialized scene graph is reproducible without the agent.
    """
    canonical: dict[int, CanonicalRelation] = {}
    for rel in graph.relations:
        resolved = agents.classify_relation(client, rel.relation)
        rel.relation = resolved.value
        canonical[rel.subject] = resolved
    return canonical


def scale_assets(graph: SceneGraph, library, config: PoolConfig) -> list[PlacedAsset]:
    """Resolve meshes and apply size-class scaling; everything starts at origin."""
    placed = []
    for spec in graph.assets:
        mesh = library.get(spec.name, spec.enriched_desc)
        placed.append(
            PlacedAsset(
                spec_id=spec.id,
                name=spec.name,
                mesh=mesh,
                scale=config.size_scale[spec.size.value],
            )
        )
    return placed


def _base_aabb(asset: PlacedAsset) -> Aabb:
    return compute_aabb(asset.world_vertices() - asset.translation)


def world_aabb(asset: PlacedAsset) -> Aabb:
    return compute_aabb(asset.world_vertices())


def front_vector(asset: PlacedAsset) -> np.ndarray:
    """World direction the asset faces (local front is -y)."""
    return asset.rotation() @ np.array([0.0, -1.0, 0.0])


def _solve(base: Aabb, cx=None, cy=None, min_x=None, max_x=None,
           min_y=None, max_y=None, min_z=None, max_z=None) -> np.ndarray:
    t = np.zeros(3)
    if cx is not None:
        t[0] = cx - (base.lo[0] + base.hi[0]) / 2.0
    if min_x is not None:
        t[0] = min_x - base.lo[0]
    if max_x is not None:
        t[0] = max_x - base.hi[0]
    if cy is not None:
        t[1] = cy - (base.lo[1] + base.hi[1]) / 2.0
    if min_y is not None:
        t[1] = min_y - base.lo[1]
    if max_y is not None:
        t[1] = max_y - base.hi[1]
    if min_z is not None:
        t[2] = min_z - base.lo[2]
    if max_z is not None:
        t[2] = max_z - base.hi[2]
    return t


def apply_relation(
    child: PlacedAsset,
    parent: PlacedAsset,
    relation: CanonicalRelation,
    config: PoolConfig,
    angle_deg: float | None = None,
) -> None:
    """Pose the child so the canonical relation holds against the parent.

    Orientation-bearing relations set yaw or tilt before the bounding box
    is solved; everything else only translates.  Assets placed beside the
    parent rest on the ground; ON/UNDER are flush with the parent's top
    and bottom faces.  Rotation defaults to 90 degrees when the scene
    gives no angle.
    """
    p = world_aabb(parent)
    pc = p.center

    if relation is CanonicalRelation.LEANING_ON:
        child.tilt = Tilt("y", config.lean_tilt_deg)
    elif relation is CanonicalRelation.ROTATION:
        child.yaw_deg = 90.0 if angle_deg is None else float(angle_deg)
    elif relation is CanonicalRelation.FACING:
        # Place at the parent's front, then aim: the local -y axis must
        # point from the child toward the parent (+y direction here).
        child.yaw_deg = 180.0

    base = _base_aabb(child)
    gap_extent = base.max_extent + p.max_extent

    if relation is CanonicalRelation.ON:
        t = _solve(base, cx=pc[0], cy=pc[1], min_z=p.hi[2])
    elif relation is CanonicalRelation.UNDER:
        t = _solve(base, cx=pc[0], cy=pc[1], max_z=p.lo[2])
    elif relation is CanonicalRelation.LEFT:
        t = _solve(base, max_x=p.lo[0], cy=pc[1], min_z=0.0)
    elif relation is CanonicalRelation.RIGHT:
        t = _solve(base, min_x=p.hi[0], cy=pc[1], min_z=0.0)
    elif relation is CanonicalRelation.FRONT:
        t = _solve(base, cx=pc[0], max_y=p.lo[1], min_z=0.0)
    elif relation is CanonicalRelation.BEHIND:
        t = _solve(base, cx=pc[0], min_y=p.hi[1], min_z=0.0)
    elif relation is CanonicalRelation.FAR:
        t = _solve(base, max_x=p.lo[0] - config.far_gap * gap_extent, cy=pc[1], min_z=0.0)
    elif relation is CanonicalRelation.NEAR:
        t = _solve(base, max_x=p.lo[0] - config.near_gap * gap_extent, cy=pc[1], min_z=0.0)
    elif relation is CanonicalRelation.CENTER_ALIGNED:
        t = _solve(base, cx=pc[0], cy=pc[1], min_z=0.0)
    elif relation is CanonicalRelation.LEANING_ON:
        t = _solve(base, max_x=p.lo[0], cy=pc[1], min_z=0.0)
    elif relation is CanonicalRelation.FACING:
        t = _solve(base, cx=pc[0], max_y=p.lo[1], min_z=0.0)
    elif relation is CanonicalRelation.ROTATION:
        t = _solve(base, max_x=p.lo[0] - config.near_gap * gap_extent, cy=pc[1], min_z=0.0)
    else:
        raise LayoutError(f"no placement rule for relation {relation.value}")
    child.translation = t


def coarse_place(
    graph: SceneGraph,
    placed: list[PlacedAsset],
    canonical: dict[int, CanonicalRelation],
    config: PoolConfig,
) -> Layout:
    """Stage-1 placement of every asset.

    The core asset sits at the origin.  Children are solved in id order
    once their target is placed; unresolvable targets mean the relations
    form a cycle.  Siblings sharing (relation, target) stagger along the
    relation's free axis by half extents plus the margin.  The final
    translation of each asset is recorded as its anchor (Rotation
    subjects excepted: their position is unconstrained).
    """
    core = core_asset_id(graph)
    by_id = {a.spec_id: a for a in placed}
    rel_by_subject = {r.subject: r for r in graph.relations}

    core_asset = by_id[core]
    core_asset.translation = np.zeros(3)
    core_asset.anchor = np.zeros(3)

    done = {core}
    # (relation, target) -> cumulative stagger state [offset, last_half_extent]
    stagger: dict[tuple[CanonicalRelation, int], list[float]] = {}

    pending = [a.spec_id for a in placed if a.spec_id != core]
    while pending:
        progressed = False
        still = []
        for sid in pending:
            rel = rel_by_subject[sid]
            if rel.target not in done:
                still.append(sid)
                continue
            child = by_id[sid]
            parent = by_id[rel.target]
            canon = canonical[sid]
            apply_relation(child, parent, canon, config, angle_deg=rel.angle_deg)

            axis = _STAGGER_AXIS[canon]
            half = float(_base_aabb(child).extent[axis]) / 2.0
            key = (canon, rel.target)
            if key in stagger:
                offset, prev_half = stagger[key]
                offset += prev_half + half + config.margin
                child.translation[axis] += offset
                stagger[key] = [offset, half]
            else:
                stagger[key] = [0.0, half]

            if canon is CanonicalRelation.ROTATION:
                child.anchor = None
            else:
                child.anchor = child.translation.copy()
            done.add(sid)
            progressed = True
        if not progressed:
            names = ", ".join(by_id[s].name for s in still)
            raise LayoutError(f"relation targets form a cycle involving: {names}")
        pending = still

    return Layout(assets=list(placed), graph=graph, provenance="coarse")


class ContourCache:
    """Contours are decimated once per asset and then ride its translation."""

    def __init__(self, config: PoolConfig):
        self.config = config
        self._base: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def world_points(self, asset: PlacedAsset) -> np.ndarray:
        entry = self._base.get(asset.spec_id)
        if entry is None:
            soup = mesh_soup(asset.world_vertices(), asset.mesh.faces)
            cloud = extract_contour(soup, self.config.cell_size, self.config.merge_eps)
            entry = (cloud.points, asset.translation.copy())
            self._base[asset.spec_id] = entry
        points, t0 = entry
        return points + (asset.translation - t0)


@dataclass(slots=True)
class MagnetStepResult:
    subject: int
    target: int
    pre_distance: float
    post_distance: float
    displacement: np.ndarray
    step_fraction: float
    moved: bool
    skipped: str = ""


def magnet_step(
    child: PlacedAsset,
    parent: PlacedAsset,
    contours: ContourCache,
    config: PoolConfig,
) -> MagnetStepResult:
    """One magnet evaluation of a related pair.

    Finds the nearest contour points and translates the child by
    lam * (parent_point - child_point) when the gap exceeds d_thresh.
    A bisection on the step fraction keeps any new bounding-box
    penetration below d_thresh; already-penetrating pairs are left alone.
    """
    c_pts = contours.world_points(child)
    p_pts = contours.world_points(parent)
    pair = nearest_pair(c_pts, p_pts)
    child_aabb = world_aabb(child)
    parent_aabb = world_aabb(parent)
    pre_pen = penetration_depth(child_aabb, parent_aabb)

    def result(post_d, disp, f, moved, skipped=""):
        return MagnetStepResult(
            subject=child.spec_id,
            target=parent.spec_id,
            pre_distance=pair.distance,
            post_distance=post_d,
            displacement=disp,
            step_fraction=f,
            moved=moved,
            skipped=skipped,
        )

    if pre_pen > 0.0:
        return result(pair.distance, np.zeros(3), 0.0, False, skipped="penetrating")
    if pair.distance <= config.d_thresh:
        return result(pair.distance, np.zeros(3), 0.0, False, skipped="in contact")

    disp = config.lam * (p_pts[pair.index_b] - c_pts[pair.index_a])

    def pen_at(f: float) -> float:
        shifted = Aabb(child_aabb.lo + f * disp, child_aabb.hi + f * disp)
        return penetration_depth(shifted, parent_aabb)

    limit = pre_pen + config.d_thresh
    if pen_at(1.0) <= limit:
        frac = 1.0
    else:
        lo, hi = 0.0, 1.0
        for _ in range(40):
            mid = (lo + hi) / 2.0
            if pen_at(mid) <= limit:
                lo = mid
            else:
                hi = mid
        frac = lo

    if frac <= 0.0:
        return result(pair.distance, np.zeros(3), 0.0, False, skipped="blocked")
    child.translation = child.translation + frac * disp
    post = nearest_pair(contours.world_points(child), p_pts).distance
    return result(post, frac * disp, frac, True)


def magnet_pairs(
    graph: SceneGraph, canonical: dict[int, CanonicalRelation],
) -> list[tuple[int, int]]:
    pairs = [
        (r.subject, r.target)
        for r in graph.relations
        if canonical[r.subject] in MAGNET_RELATIONS
    ]
    return sorted(pairs)


def run_magnet(
    layout: Layout,
    canonical: dict[int, CanonicalRelation],
    config: PoolConfig,
) -> list[MagnetStepResult]:
    """Magnet passes over all eligible pairs until quiet or the pass cap."""
    pairs = magnet_pairs(layout.graph, canonical)
    contours = ContourCache(config)
    steps: list[MagnetStepResult] = []
    for _ in range(config.magnet_max_iters):
        any_moved = False
        for subject, target in pairs:
            step = magnet_step(layout.by_id(subject), layout.by_id(target), contours, config)
            steps.append(step)
            any_moved = any_moved or step.moved
        if not any_moved:
            break
    layout.provenance = "magnetized"
    return steps


def _rotated_copy(asset: PlacedAsset, pivot_xy: np.ndarray, id_offset: int) -> PlacedAsset:
    """Rigid 180-degree copy about a vertical axis through pivot_xy."""
    dup = asset.copy()
    dup.spec_id = asset.spec_id + id_offset
    dup.name = f"{asset.name}_copy"
    dup.yaw_deg = (asset.yaw_deg + 180.0) % 360.0
    offset = np.array([pivot_xy[0], pivot_xy[1], 0.0])
    flip = np.array([-1.0, -1.0, 1.0])
    dup.translation = flip * (asset.translation - offset) + offset
    if asset.anchor is not None:
        dup.anchor = flip * (asset.anchor - offset) + offset
    return dup


def apply_special(layout: Layout, config: PoolConfig) -> Layout:
    """Expand duplicate_* scene tags by copying the whole arrangement.

    Alignment tags translate the copy along +x or +y so the two groups
    sit margin apart.  The facing tag turns the copy around first (every
    copied front ends up opposite its original) and then opens the same
    margin gap along +y.  Copies take ids offset by the asset count and
    names suffixed _copy; anchors move with their copies.
    """
    from scenepool.scene_graph import SpecialTag

    tag = layout.graph.special
    if tag is SpecialTag.NONE:
        return layout
    scene = compute_aabb(np.vstack([a.world_vertices() for a in layout.assets]))
    n = max(a.spec_id for a in layout.assets)
    copies: list[PlacedAsset] = []

    if tag in (SpecialTag.DUPLICATE_X_ALIGNMENT, SpecialTag.DUPLICATE_Y_ALIGNMENT):
        axis = 0 if tag is SpecialTag.DUPLICATE_X_ALIGNMENT else 1
        shift = np.zeros(3)
        shift[axis] = float(scene.extent[axis]) + config.margin
        for asset in layout.assets:
            dup = asset.copy()
            dup.spec_id = asset.spec_id + n
            dup.name = f"{asset.name}_copy"
            dup.translation = dup.translation + shift
            if dup.anchor is not None:
                dup.anchor = dup.anchor + shift
            copies.append(dup)
    elif tag is SpecialTag.DUPLICATE_FACING:
        pivot = scene.center[:2]
        shift = np.array([0.0, float(scene.extent[1]) + config.margin, 0.0])
        for asset in layout.assets:
            dup = _rotated_copy(asset, pivot, n)
            dup.translation = dup.translation + shift
            if dup.anchor is not None:
                dup.anchor = dup.anchor + shift
            copies.append(dup)
    else:
        raise LayoutError(f"no duplication rule for special tag {tag.value}")

    layout.assets = layout.assets + copies
    return layout
