"""Stage-2 supervision: violation measurement, scoring, critics, refinement.

A layout is scored per asset.  The physical part combines bounding-box
penetration against every other asset and the support gap below the
asset (its relation partner's face for on/under subjects, the ground
otherwise).  The positional part is the drift of the asset from the
anchor coarse placement assigned.  The scene score is

    S = 1 - (1/N) * sum(alpha * physical_i + beta * min(drift_i, D) / D)

with physical_i clamped to [0, 1] and D = delta_max.  alpha + beta must
be 1.

Refinement repeatedly asks a critic (rule based or agent backed) for
moves, applies them to a candidate copy, and keeps the candidate only if
its score improves.  A rejected candidate gets one re-plan (halved moves
for the rule critic, a repeat query for agent critics); two rejected
iterations in a row end the loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from scenepool import agents
from scenepool.errors import LayoutError, RefineError
from scenepool.ground import GROUND_COLORS, GroundPlane
from scenepool.assets import asset_color
from scenepool.physical_pool import Layout, world_aabb
from scenepool.relations import CanonicalRelation, classify_phrase
from scenepool.scene_graph import SceneGraph


@dataclass
class ScoreConfig:
    alpha: float = 0.7
    beta: float = 0.3
    delta_max: float = 0.5
    rationality_threshold: float = 0.85
    max_iters: int = 10
    float_tolerance: float = 0.02

    def __post_init__(self):
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise LayoutError("alpha + beta must equal 1")
        if not (0.0 < self.delta_max):
            raise LayoutError("delta_max must be positive")
        if self.max_iters < 0:
            raise LayoutError("max_iters must be non-negative")
        if self.float_tolerance < 0:
            raise LayoutError("float_tolerance must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "ScoreConfig":
        known = {
            "alpha", "beta", "delta_max", "rationality_threshold",
            "max_iters", "float_tolerance",
        }
        for key in data:
            if key not in known:
                raise LayoutError(f"unknown score config key '{key}'")
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "delta_max": self.delta_max,
            "rationality_threshold": self.rationality_threshold,
            "max_iters": self.max_iters,
            "float_tolerance": self.float_tolerance,
        }


@dataclass(slots=True)
class ViolationReport:
    """Per-asset measurements; penetration and floating are 0..1."""

    asset_id: int
    penetration: float
    floating: float
    drift: float
    pen_depth: float = 0.0
    pen_axis: int = -1
    pen_dir: float = 0.0
    gap: float = 0.0

    def clean(self, drift_tol: float = 1e-9) -> bool:
        return self.penetration == 0.0 and self.floating == 0.0 and self.drift <= drift_tol

    def to_dict(self) -> dict:
        return {
            "asset": self.asset_id,
            "penetration": self.penetration,
            "floating": self.floating,
            "drift": self.drift,
        }


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def _canonical_of(graph: SceneGraph) -> dict[int, CanonicalRelation]:
    out = {}
    for r in graph.relations:
        rel = classify_phrase(r.relation)
        if rel is not None:
            out[r.subject] = rel
    return out


def _relation_maps(layout: Layout) -> tuple[dict[int, tuple[int, str]], set[frozenset[int]]]:
    """Support partners for on/under subjects and center-aligned pair set.

    When the layout holds duplicated assets (ids offset by the graph's
    asset count), each copied pair inherits its originals' relation.
    """
    graph = layout.graph
    canonical = _canonical_of(graph)
    present = {a.spec_id for a in layout.assets}
    n = max((a.id for a in graph.assets), default=0)
    support: dict[int, tuple[int, str]] = {}
    aligned: set[frozenset[int]] = set()
    for r in graph.relations:
        rel = canonical.get(r.subject)
        if rel is None:
            continue
        shifts = [0]
        if r.subject + n in present and r.target + n in present:
            shifts.append(n)
        for s in shifts:
            if rel is CanonicalRelation.ON:
                support[r.subject + s] = (r.target + s, "on")
            elif rel is CanonicalRelation.UNDER:
                support[r.subject + s] = (r.target + s, "under")
            elif rel is CanonicalRelation.CENTER_ALIGNED:
                aligned.add(frozenset((r.subject + s, r.target + s)))
    return support, aligned


def measure_violations(layout: Layout, config: ScoreConfig) -> list[ViolationReport]:
    """Per-asset penetration, support gap, and anchor drift."""
    from scenepool.geometry import penetration_depth

    support, aligned = _relation_maps(layout)
    aabbs = {a.spec_id: world_aabb(a) for a in layout.assets}
    reports: list[ViolationReport] = []

    for asset in layout.assets:
        box = aabbs[asset.spec_id]
        worst_depth = 0.0
        worst_axis = -1
        worst_dir = 0.0
        for other in layout.assets:
            if other.spec_id == asset.spec_id:
                continue
            if frozenset((asset.spec_id, other.spec_id)) in aligned:
                continue  # overlap is that relation's intent
            obox = aabbs[other.spec_id]
            depth = penetration_depth(box, obox)
            if depth > worst_depth:
                worst_depth = depth
                overlap = np.minimum(box.hi, obox.hi) - np.maximum(box.lo, obox.lo)
                worst_axis = int(np.argmin(overlap))
                diff = box.center[worst_axis] - obox.center[worst_axis]
                worst_dir = 1.0 if diff >= 0.0 else -1.0
        pen = _clamp01(worst_depth / max(box.min_extent, 1e-9))

        partner = support.get(asset.spec_id)
        if partner is not None:
            pbox = aabbs.get(partner[0])
            if pbox is None:
                gap = box.lo[2]
            elif partner[1] == "on":
                gap = float(box.lo[2] - pbox.hi[2])
            else:
                gap = float(pbox.lo[2] - box.hi[2])
        else:
            gap = float(box.lo[2])
        height = max(float(box.extent[2]), 1e-9)
        floating = _clamp01((max(gap, 0.0) - config.float_tolerance) / height)
        if gap <= config.float_tolerance:
            floating = 0.0

        drift = 0.0
        if asset.anchor is not None:
            drift = float(np.linalg.norm(asset.translation - asset.anchor))

        reports.append(
            ViolationReport(
                asset_id=asset.spec_id,
                penetration=pen,
                floating=floating,
                drift=drift,
                pen_depth=worst_depth,
                pen_axis=worst_axis,
                pen_dir=worst_dir,
                gap=gap,
            )
        )
    return reports


def score_reports(reports: list[ViolationReport], config: ScoreConfig) -> float:
    """Scene score from per-asset reports (1 is perfect)."""
    if not reports:
        return 1.0
    total = 0.0
    for r in reports:
        physical = _clamp01(r.penetration + r.floating)
        positional = min(r.drift, config.delta_max) / config.delta_max
        total += config.alpha * physical + config.beta * positional
    return 1.0 - total / len(reports)


def score_layout(layout: Layout, config: ScoreConfig) -> tuple[float, list[ViolationReport]]:
    reports = measure_violations(layout, config)
    return score_reports(reports, config), reports


def reports_clean(reports: list[ViolationReport], drift_tol: float = 1e-9) -> bool:
    return all(r.clean(drift_tol) for r in reports)


# --------------------------------------------------------------------------
# Orthographic snapshots

SNAPSHOT_SIZE = 512
ORTHO_WIDTH = 10.0
CAMERA_DISTANCE = 8.0  # documented camera offset; orthographic, so depth only orders

_DIGITS = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
}

# view name -> (u column, u sign, v column, depth column)
_VIEWS = {
    "x": (1, 1.0, 2, 0),   # camera on +x: screen right = +y, up = +z
    "y": (0, -1.0, 2, 1),  # camera on +y: screen right = -x, up = +z
    "z": (0, 1.0, 1, 2),   # camera on +z looking down, screen up = +y
}


@dataclass
class SnapshotSet:
    size: int
    views: dict[str, bytes]

    def save(self, outdir) -> dict[str, str]:
        from pathlib import Path

        out = {}
        for view, ppm in self.views.items():
            path = Path(outdir) / f"snap_{view}.ppm"
            path.write_bytes(ppm)
            out[view] = str(path)
        return out


def _fill_triangle(canvas: np.ndarray, pts: np.ndarray, color: np.ndarray):
    size = canvas.shape[0]
    (x0, y0), (x1, y1), (x2, y2) = pts
    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    if abs(area) < 1e-12:
        return
    lo_x = max(int(math.floor(min(x0, x1, x2))), 0)
    hi_x = min(int(math.ceil(max(x0, x1, x2))), size - 1)
    lo_y = max(int(math.floor(min(y0, y1, y2))), 0)
    hi_y = min(int(math.ceil(max(y0, y1, y2))), size - 1)
    if lo_x > hi_x or lo_y > hi_y:
        return
    xs = np.arange(lo_x, hi_x + 1) + 0.5
    ys = np.arange(lo_y, hi_y + 1) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    e01 = (x1 - x0) * (gy - y0) - (y1 - y0) * (gx - x0)
    e12 = (x2 - x1) * (gy - y1) - (y2 - y1) * (gx - x1)
    e20 = (x0 - x2) * (gy - y2) - (y0 - y2) * (gx - x2)
    inside = ((e01 >= 0) & (e12 >= 0) & (e20 >= 0)) | ((e01 <= 0) & (e12 <= 0) & (e20 <= 0))
    if not inside.any():
        return
    rows, cols = np.nonzero(inside)
    canvas[rows + lo_y, cols + lo_x] = color


def _draw_label(img: np.ndarray, text: str, row: int, col: int, scale: int = 2):
    size = img.shape[0]
    x = col
    for ch in text:
        glyph = _DIGITS.get(ch)
        if glyph is None:
            continue
        for gy, line in enumerate(glyph):
            for gx, bit in enumerate(line):
                if bit != "1":
                    continue
                r0 = row + gy * scale
                c0 = x + gx * scale
                for dr in range(scale):
                    for dc in range(scale):
                        r, c = r0 + dr, c0 + dc
                        if 0 <= r < size and 0 <= c < size:
                            img[r, c] = (0, 0, 0)
        x += 4 * scale


def render_snapshots(
    layout: Layout,
    ground: GroundPlane | None = None,
    size: int = SNAPSHOT_SIZE,
    ortho_width: float = ORTHO_WIDTH,
) -> SnapshotSet:
    """Render orthographic views from +x, +y and +z as P6 PPM images.

    Painter's algorithm over all triangles (far first, stable order), flat
    per-asset colors, white background, and a black id label at each
    asset's projected center.  Purely numpy arithmetic, so output bytes
    are reproducible.
    """
    world = [(a, a.world_vertices()) for a in layout.assets]
    views: dict[str, bytes] = {}

    for view, (uc, usign, vc, dc) in _VIEWS.items():
        canvas = np.full((size, size, 3), 255, dtype=np.uint8)

        def to_px(u):
            return (u / ortho_width + 0.5) * size

        if ground is not None:
            gcolor = np.array([int(c * 255) for c in GROUND_COLORS[ground.kind]], dtype=np.uint8)
            half = ground.extent / 2.0
            if view == "z":
                c0, c1 = sorted((to_px(-half), to_px(half)))
                r0, r1 = c0, c1
                lo_c = max(int(c0), 0)
                hi_c = min(int(c1), size - 1)
                lo_r = max(int(r0), 0)
                hi_r = min(int(r1), size - 1)
                canvas[lo_r: hi_r + 1, lo_c: hi_c + 1] = gcolor
            else:
                gr = int(to_px(ground.height))
                lo_c = max(int(to_px(-half)), 0)
                hi_c = min(int(to_px(half)), size - 1)
                if 0 <= gr < size:
                    canvas[max(gr - 1, 0): gr + 1, lo_c: hi_c + 1] = gcolor

        tris = []
        colors = []
        depths = []
        for asset, wv in world:
            u = usign * wv[:, uc]
            v = wv[:, vc]
            d = wv[:, dc]
            px = np.stack([to_px(u), to_px(v)], axis=1)
            color = np.array([int(c * 255) for c in asset_color(asset.spec_id)], dtype=np.uint8)
            for face in asset.mesh.faces:
                tris.append(px[face])
                colors.append(color)
                depths.append(float(d[face].mean()))
        if tris:
            order = np.argsort(np.asarray(depths), kind="stable")
            for i in order:
                _fill_triangle(canvas, tris[i], colors[i])

        img = canvas[::-1].copy()
        for asset, wv in world:
            u = usign * wv[:, uc]
            v = wv[:, vc]
            cu = float((u.min() + u.max()) / 2.0)
            cv = float((v.min() + v.max()) / 2.0)
            col = int(to_px(cu))
            row = size - 1 - int(to_px(cv))
            _draw_label(img, str(asset.spec_id), row - 5, col - 3)

        header = f"P6\n{size} {size}\n255\n".encode()
        views[view] = header + img.tobytes()
    return SnapshotSet(size=size, views=views)


# --------------------------------------------------------------------------
# Critics

@dataclass
class RefineContext:
    """Everything a critic may look at for one critique call."""

    layout: Layout
    reports: list[ViolationReport]
    score: float
    config: ScoreConfig
    iteration: int
    attempt: int = 1
    ground: GroundPlane | None = None
    _snapshot_cache: dict[str, bytes] | None = None

    def snapshots(self) -> dict[str, bytes]:
        if self._snapshot_cache is None:
            self._snapshot_cache = render_snapshots(self.layout, self.ground).views
        return self._snapshot_cache


def critique_payload(ctx: RefineContext, snapshots: dict[str, dict]) -> dict:
    return {
        "description": ctx.layout.graph.description,
        "iteration": ctx.iteration,
        "attempt": ctx.attempt,
        "score": round(ctx.score, 9),
        "assets": [
            {
                "id": a.spec_id,
                "name": a.name,
                "translation": [round(float(x), 9) for x in a.translation],
                "yaw_deg": round(float(a.yaw_deg), 6),
                "scale": round(float(a.scale), 6),
            }
            for a in ctx.layout.assets
        ],
        "violations": [
            {
                "asset": r.asset_id,
                "penetration": round(r.penetration, 9),
                "floating": round(r.floating, 9),
                "drift": round(r.drift, 9),
            }
            for r in ctx.reports
        ],
        "snapshots": snapshots,
    }


class RuleCritic:
    """Deterministic critic: restore drifted anchors, then drop floaters,
    then push penetrating assets apart along the smallest overlap axis.

    Emits the same JSON an agent critic would, so move validation and
    clamping follow one code path.
    """

    replan_mode = "halve"

    def __call__(self, ctx: RefineContext) -> agents.CritiqueResult:
        moves = []
        for report in ctx.reports:
            if report.clean():
                continue
            asset = ctx.layout.by_id(report.asset_id)
            if report.drift > 1e-9 and asset.anchor is not None:
                vec = asset.anchor - asset.translation
            elif report.floating > 0.0:
                vec = np.array([0.0, 0.0, -report.gap])
            elif report.penetration > 0.0 and report.pen_axis >= 0:
                vec = np.zeros(3)
                vec[report.pen_axis] = report.pen_dir * (report.pen_depth + 1e-3)
            else:
                continue
            moves.append({"id": report.asset_id, "move": [float(x) for x in vec]})
        data = {
            "verdict": "negative" if moves else "positive",
            "moves": moves,
            "comment": f"adjusting {len(moves)} asset(s)" if moves else "layout acceptable",
        }
        return agents.parse_critique(data, delta_max=ctx.config.delta_max)


class LlmCritic:
    """Agent-backed critic; snapshots ride along with the layout state."""

    replan_mode = "requery"

    def __init__(self, client: agents.AgentClient):
        self.client = client

    def __call__(self, ctx: RefineContext) -> agents.CritiqueResult:
        snaps = {k: agents.encode_snapshot(v) for k, v in sorted(ctx.snapshots().items())}
        payload = critique_payload(ctx, snaps)
        return agents.critique_layout(self.client, payload, delta_max=ctx.config.delta_max)


# --------------------------------------------------------------------------
# Refinement loop

@dataclass
class RefineTrace:
    initial_score: float
    iterations: list[dict] = field(default_factory=list)
    terminal_reason: str = ""
    final_score: float = 0.0

    def to_dict(self) -> dict:
        return {
            "initial_score": self.initial_score,
            "iterations": self.iterations,
            "terminal_reason": self.terminal_reason,
            "final_score": self.final_score,
        }


@dataclass
class RefineOutcome:
    layout: Layout
    score: float
    reports: list[ViolationReport]
    trace: RefineTrace


def _apply_moves(layout: Layout, moves: list[agents.LayoutGuidance]) -> Layout:
    candidate = layout.copy()
    for guidance in moves:
        asset = candidate.by_id(guidance.asset_id)  # unknown id raises LayoutError
        asset.translation = asset.translation + guidance.move
    return candidate


def refine(
    layout: Layout,
    config: ScoreConfig,
    critic,
    ground: GroundPlane | None = None,
) -> RefineOutcome:
    """Critic-guided improvement until the score exceeds the threshold.

    Each iteration scores a candidate with the critic's moves applied and
    keeps it only on strict improvement.  A rejected candidate gets one
    re-plan (critic.replan_mode: "halve" shrinks the moves, anything else
    asks again with an incremented attempt counter); two consecutive
    rejected iterations stop the loop.  Termination reasons:
    ThresholdReached, MaxIters, NoProgress.  A critic failure raises
    RefineError with the partial trace attached.
    """
    work = layout.copy()
    score, reports = score_layout(work, config)
    trace = RefineTrace(initial_score=score)

    if score > config.rationality_threshold:
        trace.terminal_reason = "ThresholdReached"
        trace.final_score = score
        work.provenance = "refined"
        return RefineOutcome(layout=work, score=score, reports=reports, trace=trace)

    replan_mode = getattr(critic, "replan_mode", "requery")
    consecutive_rejects = 0

    for iteration in range(1, config.max_iters + 1):
        record: dict = {"iteration": iteration, "score_before": score}
        ctx = RefineContext(
            layout=work, reports=reports, score=score, config=config,
            iteration=iteration, attempt=1, ground=ground,
        )
        try:
            critique = critic(ctx)
        except agents.AgentError as e:
            trace.terminal_reason = "CriticError"
            trace.final_score = score
            raise RefineError(f"critic failed at iteration {iteration}: {e}", trace=trace) from e
        record["verdict"] = "positive" if critique.positive else "negative"
        record["moves"] = [
            {"id": g.asset_id, "move": [float(x) for x in g.move]} for g in critique.moves
        ]

        candidate = _apply_moves(work, critique.moves)
        cand_score, cand_reports = score_layout(candidate, config)
        record["candidate_score"] = cand_score
        accepted = cand_score > score
        replanned = False

        if not accepted:
            replanned = True
            if replan_mode == "halve":
                halved = [
                    agents.LayoutGuidance(g.asset_id, g.move / 2.0) for g in critique.moves
                ]
                retry_moves = halved
            else:
                ctx.attempt = 2
                try:
                    retry_moves = critic(ctx).moves
                except agents.AgentError as e:
                    trace.terminal_reason = "CriticError"
                    trace.final_score = score
                    raise RefineError(
                        f"critic re-plan failed at iteration {iteration}: {e}", trace=trace,
                    ) from e
            record["replan_moves"] = [
                {"id": g.asset_id, "move": [float(x) for x in g.move]} for g in retry_moves
            ]
            candidate = _apply_moves(work, retry_moves)
            cand_score, cand_reports = score_layout(candidate, config)
            record["replan_score"] = cand_score
            accepted = cand_score > score

        record["accepted"] = accepted
        record["replanned"] = replanned
        if accepted:
            work = candidate
            score, reports = cand_score, cand_reports
            consecutive_rejects = 0
        else:
            consecutive_rejects += 1
        record["score_after"] = score
        trace.iterations.append(record)

        if score > config.rationality_threshold:
            trace.terminal_reason = "ThresholdReached"
            break
        if consecutive_rejects >= 2:
            trace.terminal_reason = "NoProgress"
            break
    else:
        trace.terminal_reason = "MaxIters"

    trace.final_score = score
    work.provenance = "refined"
    return RefineOutcome(layout=work, score=score, reports=reports, trace=trace)
