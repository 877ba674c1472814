"""End-to-end pipeline: DSL text in, scored scene artifacts out.

Stages: parse, canonicalize relations, resolve meshes, scale, coarse
placement, magnet, special duplication, ground selection, critic-guided
refinement.  A successful run leaves seven artifacts in the output
directory:

    scene_graph.json  canonicalized scene graph
    layout.json       placed assets, ground, score, refinement summary
    scene.glb         binary glTF export
    snap_x.ppm        orthographic snapshot from +x (and _y, _z)
    trace.json        magnet steps, refinement log, configs, violations

Exit codes: 0 threshold reached, 2 scene text rejected, 3 refinement
ended below the threshold (artifacts still written), 1 anything else
(an error.json is written with whatever artifacts were already done).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scenepool import agents, gltf, supervision
from scenepool.assets import AssetCache, DirLibrary, PrimitiveLibrary
from scenepool.errors import (
    AgentError,
    AssetError,
    DslError,
    GltfError,
    LayoutError,
    RefineError,
    SceneGraphError,
)
from scenepool.ground import GroundKind, GroundPlane, select_ground
from scenepool.physical_pool import (
    Layout,
    PoolConfig,
    apply_special,
    canonicalize_graph,
    coarse_place,
    run_magnet,
    scale_assets,
)
from scenepool.scene_graph import SceneGraph, dump_graph, load_graph, parse_dsl
from scenepool.supervision import ScoreConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DSL = 2
EXIT_BELOW_THRESHOLD = 3


@dataclass
class PipelineConfig:
    pool: PoolConfig = field(default_factory=PoolConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    critic: str = "rule"
    assets: str = "primitives"
    cache_dir: str = "asset_cache"
    agent: dict | None = None
    ground_extent: float = 12.0

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "PipelineConfig":
        known = {"pool", "score", "critic", "assets", "cache_dir", "agent", "ground_extent"}
        for key in data:
            if key not in known:
                raise LayoutError(f"unknown config key '{key}'")
        cfg = cls(
            pool=PoolConfig.from_dict(data.get("pool", {})),
            score=ScoreConfig.from_dict(data.get("score", {})),
            critic=data.get("critic", "rule"),
            assets=data.get("assets", "primitives"),
            cache_dir=data.get("cache_dir", "asset_cache"),
            agent=data.get("agent"),
            ground_extent=float(data.get("ground_extent", 12.0)),
        )
        if cfg.critic not in ("rule", "llm"):
            raise LayoutError(f"critic must be 'rule' or 'llm', got '{cfg.critic}'")
        if base_dir is not None and cfg.assets not in ("primitives", "cache"):
            p = Path(cfg.assets)
            if not p.is_absolute():
                cfg.assets = str(base_dir / p)
        if base_dir is not None:
            p = Path(cfg.cache_dir)
            if not p.is_absolute():
                cfg.cache_dir = str(base_dir / p)
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise LayoutError(f"cannot read config {path}: {e}") from None
        return cls.from_dict(data, base_dir=path.parent)


def build_library(config: PipelineConfig):
    if config.assets == "primitives":
        return PrimitiveLibrary()
    if config.assets == "cache":
        return AssetCache(config.cache_dir)
    return DirLibrary(config.assets)


def build_client(config: PipelineConfig, base_dir: Path | None = None) -> agents.AgentClient | None:
    if not config.agent:
        return None
    return agents.AgentClient.from_dict(config.agent, base_dir=base_dir)


@dataclass
class PipelineResult:
    exit_code: int
    outdir: Path
    artifacts: dict[str, str] = field(default_factory=dict)
    score: float | None = None
    terminal_reason: str | None = None
    error: str | None = None
    layout: Layout | None = None
    graph: SceneGraph | None = None


def _dump_json(path: Path, data: dict) -> str:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return str(path)


def layout_json_doc(layout: Layout, ground: GroundPlane, score: float, trace: dict) -> dict:
    assets = []
    for a in layout.assets:
        entry = {
            "id": a.spec_id,
            "name": a.name,
            "scale": float(a.scale),
            "yaw_deg": float(a.yaw_deg),
            "translation": [float(x) for x in a.translation],
        }
        if a.tilt is not None:
            entry["tilt"] = {"axis": a.tilt.axis, "deg": float(a.tilt.deg)}
        assets.append(entry)
    return {
        "assets": assets,
        "ground": {
            "kind": ground.kind.value,
            "height": float(ground.height),
            "extent": float(ground.extent),
        },
        "score": float(score),
        "trace": trace,
    }


def _magnet_dicts(steps) -> list[dict]:
    return [
        {
            "subject": s.subject,
            "target": s.target,
            "pre_distance": s.pre_distance,
            "post_distance": s.post_distance,
            "displacement": [float(x) for x in s.displacement],
            "step_fraction": s.step_fraction,
            "moved": s.moved,
            "skipped": s.skipped,
        }
        for s in steps
    ]


def _write_artifacts(
    outdir: Path,
    layout: Layout,
    ground: GroundPlane,
    score: float,
    refine_trace: dict,
    magnet_steps: list[dict],
    reports,
    config: PipelineConfig,
    artifacts: dict[str, str],
):
    artifacts["layout.json"] = _dump_json(
        outdir / "layout.json", layout_json_doc(layout, ground, score, refine_trace)
    )
    (outdir / "scene.glb").write_bytes(gltf.export_scene_glb(layout.assets, ground))
    artifacts["scene.glb"] = str(outdir / "scene.glb")
    snaps = supervision.render_snapshots(layout, ground)
    for view, path in snaps.save(outdir).items():
        artifacts[f"snap_{view}.ppm"] = path
    artifacts["trace.json"] = _dump_json(
        outdir / "trace.json",
        {
            "provenance": layout.provenance,
            "magnet": magnet_steps,
            "refine": refine_trace,
            "violations": [r.to_dict() for r in reports],
            "pool_config": config.pool.to_dict(),
            "score_config": config.score.to_dict(),
        },
    )


def run_pipeline(
    source: str | SceneGraph,
    outdir: str | Path,
    config: PipelineConfig | None = None,
    client: agents.AgentClient | None = None,
) -> PipelineResult:
    """Run every stage; never raises, failures land in the result/error.json."""
    config = config or PipelineConfig()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    result = PipelineResult(exit_code=EXIT_ERROR, outdir=outdir)

    def fail(code: int, err: Exception) -> PipelineResult:
        result.exit_code = code
        result.error = f"{type(err).__name__}: {err}"
        _dump_json(outdir / "error.json", {"error": type(err).__name__, "message": str(err)})
        result.artifacts["error.json"] = str(outdir / "error.json")
        return result

    try:
        graph = parse_dsl(source) if isinstance(source, str) else source
        result.graph = graph
    except DslError as e:
        return fail(EXIT_DSL, e)

    if client is None:
        try:
            client = build_client(config)
        except AgentError as e:
            return fail(EXIT_ERROR, e)

    try:
        canonical = canonicalize_graph(graph, client)
    except (AgentError, SceneGraphError) as e:
        return fail(EXIT_ERROR, e)
    result.artifacts["scene_graph.json"] = str(outdir / "scene_graph.json")
    (outdir / "scene_graph.json").write_text(dump_graph(graph), encoding="utf-8")

    try:
        library = build_library(config)
        placed = scale_assets(graph, library, config.pool)
        layout = coarse_place(graph, placed, canonical, config.pool)
        magnet_steps = run_magnet(layout, canonical, config.pool)
        layout = apply_special(layout, config.pool)
    except (AssetError, GltfError, LayoutError) as e:
        return fail(EXIT_ERROR, e)

    ground = select_ground(graph.description, graph.ground, extent=config.ground_extent)

    if config.critic == "llm":
        if client is None:
            return fail(EXIT_ERROR, AgentError("the llm critic needs an 'agent' config block"))
        critic = supervision.LlmCritic(client)
    else:
        critic = supervision.RuleCritic()

    try:
        outcome = supervision.refine(layout, config.score, critic, ground=ground)
    except RefineError as e:
        # Keep what we have: score the pre-refine layout and write artifacts.
        score, reports = supervision.score_layout(layout, config.score)
        trace_dict = e.trace.to_dict() if e.trace is not None else {}
        _write_artifacts(
            outdir, layout, ground, score, trace_dict,
            _magnet_dicts(magnet_steps), reports, config, result.artifacts,
        )
        result.layout = layout
        result.score = score
        return fail(EXIT_ERROR, e)

    result.layout = outcome.layout
    result.score = outcome.score
    result.terminal_reason = outcome.trace.terminal_reason
    _write_artifacts(
        outdir, outcome.layout, ground, outcome.score, outcome.trace.to_dict(),
        _magnet_dicts(magnet_steps), outcome.reports, config, result.artifacts,
    )
    result.exit_code = EXIT_OK if outcome.trace.terminal_reason == "ThresholdReached" else EXIT_BELOW_THRESHOLD
    return result


LAYOUT_SCHEMA: dict = {
    "type": "object",
    "required": ["assets", "ground", "score", "trace"],
    "properties": {
        "assets": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "name", "scale", "yaw_deg", "translation"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "name": {"type": "string"},
                    "scale": {"type": "number"},
                    "yaw_deg": {"type": "number"},
                    "translation": {
                        "type": "array", "minItems": 3, "maxItems": 3,
                        "items": {"type": "number"},
                    },
                    "tilt": {
                        "type": "object",
                        "required": ["axis", "deg"],
                        "properties": {
                            "axis": {"enum": ["x", "y"]},
                            "deg": {"type": "number"},
                        },
                    },
                },
            },
        },
        "ground": {
            "type": "object",
            "required": ["kind", "height", "extent"],
            "properties": {
                "kind": {"enum": [k.value for k in GroundKind]},
                "height": {"type": "number"},
                "extent": {"type": "number"},
            },
        },
        "score": {"type": "number"},
        "trace": {"type": "object"},
    },
}


def load_saved_layout(
    layout_path: str | Path, config: PipelineConfig | None = None,
) -> tuple[Layout, GroundPlane, dict]:
    """Rebuild a Layout from layout.json plus its sibling scene_graph.json.

    Meshes come from the configured asset source and anchors from a
    deterministic replay of stage 1; the saved translations, yaws and
    tilts then overwrite the replayed poses.
    """
    import jsonschema

    config = config or PipelineConfig()
    layout_path = Path(layout_path)
    try:
        doc = json.loads(layout_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise LayoutError(f"cannot read {layout_path}: {e}") from None
    try:
        jsonschema.validate(doc, LAYOUT_SCHEMA)
    except jsonschema.ValidationError as e:
        raise LayoutError(f"bad layout document: {e.json_path}: {e.message}") from None

    graph_path = layout_path.parent / "scene_graph.json"
    if not graph_path.is_file():
        raise LayoutError(f"no scene_graph.json next to {layout_path}")
    graph = load_graph(graph_path.read_text(encoding="utf-8"))

    canonical = canonicalize_graph(graph, None)
    library = build_library(config)
    placed = scale_assets(graph, library, config.pool)
    layout = coarse_place(graph, placed, canonical, config.pool)
    run_magnet(layout, canonical, config.pool)
    layout = apply_special(layout, config.pool)

    from scenepool.assets import Tilt

    seen = set()
    for entry in doc["assets"]:
        asset = layout.by_id(entry["id"])  # raises LayoutError on unknown ids
        asset.scale = float(entry["scale"])
        asset.yaw_deg = float(entry["yaw_deg"])
        asset.translation = np.array([float(x) for x in entry["translation"]])
        tilt = entry.get("tilt")
        asset.tilt = Tilt(tilt["axis"], float(tilt["deg"])) if tilt else None
        seen.add(entry["id"])
    missing = {a.spec_id for a in layout.assets} - seen
    if missing:
        raise LayoutError(f"layout document is missing assets {sorted(missing)}")

    g = doc["ground"]
    ground = GroundPlane(
        kind=GroundKind(g["kind"]), height=float(g["height"]), extent=float(g["extent"])
    )
    return layout, ground, doc
