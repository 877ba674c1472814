import json

import numpy as np
import pytest

import helpers
from scenepool import gltf
from scenepool.agents import AgentClient
from scenepool.assets import AssetCache, DirLibrary, PrimitiveLibrary, make_primitive
from scenepool.errors import LayoutError
from scenepool.pipeline import (
    EXIT_BELOW_THRESHOLD,
    EXIT_DSL,
    EXIT_ERROR,
    EXIT_OK,
    PipelineConfig,
    build_client,
    build_library,
    layout_json_doc,
    load_saved_layout,
    run_pipeline,
)
from scenepool.scene_graph import parse_dsl

ARTIFACTS = [
    "scene_graph.json", "layout.json", "scene.glb",
    "snap_x.ppm", "snap_y.ppm", "snap_z.ppm", "trace.json",
]

CFG_99 = {"score": {"rationality_threshold": 0.99}}


def _run(tmp_path, sub="out", config=None, source=helpers.BIRD_CHAIR_DSL, client=None):
    cfg = PipelineConfig.from_dict(config or CFG_99)
    return run_pipeline(source, tmp_path / sub, cfg, client=client)


# --------------------------------------------------------------------------
# Happy path

def test_pipeline_writes_all_artifacts(tmp_path):
    res = _run(tmp_path)
    assert res.exit_code == EXIT_OK
    assert res.terminal_reason == "ThresholdReached"
    assert res.score == 1.0
    assert sorted(res.artifacts) == sorted(ARTIFACTS)
    for name in ARTIFACTS:
        assert (res.outdir / name).stat().st_size > 0

    doc = json.loads((res.outdir / "layout.json").read_text())
    assert doc["score"] == 1.0
    assert {a["id"] for a in doc["assets"]} == {1, 2}
    assert doc["ground"]["kind"] == "grass"
    assert doc["trace"]["terminal_reason"] == "ThresholdReached"

    trace = json.loads((res.outdir / "trace.json").read_text())
    assert trace["provenance"] == "refined"
    assert all(v["penetration"] == 0.0 and v["floating"] == 0.0 for v in trace["violations"])
    assert trace["magnet"], "magnet stage should have recorded steps"
    assert trace["score_config"]["rationality_threshold"] == 0.99

    scene = gltf.read_glb_scene(res.outdir / "scene.glb")
    assert len(scene) == 3  # bird, chair, ground plane


def test_pipeline_rerun_is_byte_identical(tmp_path):
    a = _run(tmp_path, "a")
    b = _run(tmp_path, "b")
    assert a.exit_code == b.exit_code == EXIT_OK
    for name in ARTIFACTS:
        assert (a.outdir / name).read_bytes() == (b.outdir / name).read_bytes(), name


def test_pipeline_accepts_graph_object(tmp_path):
    graph = parse_dsl(helpers.BIRD_CHAIR_DSL)
    res = run_pipeline(graph, tmp_path / "out", PipelineConfig.from_dict(CFG_99))
    assert res.exit_code == EXIT_OK
    assert res.graph is graph


# --------------------------------------------------------------------------
# Failure exits

def test_pipeline_dsl_error_exits_2(tmp_path):
    res = _run(tmp_path, source="asset: bird\n")  # no scene line
    assert res.exit_code == EXIT_DSL
    assert res.error.startswith("DslError")
    err = json.loads((res.outdir / "error.json").read_text())
    assert err["error"] == "DslError"
    assert list(res.artifacts) == ["error.json"]
    assert not (res.outdir / "layout.json").exists()


def test_pipeline_below_threshold_exits_3(tmp_path):
    # nothing can strictly exceed a threshold of 1.0, so refinement ends
    # with NoProgress; artifacts are still written for inspection
    res = _run(tmp_path, config={"score": {"rationality_threshold": 1.0}})
    assert res.exit_code == EXIT_BELOW_THRESHOLD
    assert res.terminal_reason == "NoProgress"
    assert res.score == 1.0
    assert sorted(res.artifacts) == sorted(ARTIFACTS)


def test_pipeline_unknown_relation_without_client_exits_1(tmp_path):
    dsl = (
        "scene: a lamp hovering over a desk\n"
        "asset: lamp | size=s\n"
        "asset: desk | size=m\n"
        "rel: lamp hovering over desk\n"
    )
    res = _run(tmp_path, source=dsl)
    assert res.exit_code == EXIT_ERROR
    assert "hovering over" in res.error
    assert (res.outdir / "error.json").is_file()


def test_pipeline_llm_critic_without_agent_exits_1(tmp_path):
    res = _run(tmp_path, config=dict(CFG_99, critic="llm"))
    assert res.exit_code == EXIT_ERROR
    assert "agent" in res.error


def test_pipeline_refine_error_keeps_prerefine_artifacts(tmp_path):
    # an llm critic replaying from an empty transcript fails at iteration 1;
    # the pipeline scores the pre-refine layout and still writes artifacts
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    client = AgentClient(mode="replay", transcript_path=empty)
    res = _run(tmp_path, config=dict(CFG_99, critic="llm"), client=client)
    assert res.exit_code == EXIT_ERROR
    assert "critic failed at iteration 1" in res.error
    assert abs(res.score - 0.9781470592274595) < 1e-12
    for name in ARTIFACTS + ["error.json"]:
        assert (res.outdir / name).stat().st_size > 0
    doc = json.loads((res.outdir / "layout.json").read_text())
    assert doc["trace"]["terminal_reason"] == "CriticError"


def test_pipeline_llm_critic_replay_succeeds(tmp_path):
    client = AgentClient(mode="replay", transcript_path=helpers.TRANSCRIPT_PATH)
    res = _run(tmp_path, config=dict(CFG_99, critic="llm"), client=client)
    assert res.exit_code == EXIT_OK
    assert res.score == 1.0
    assert res.terminal_reason == "ThresholdReached"


# --------------------------------------------------------------------------
# Config

def test_pipeline_config_validation():
    with pytest.raises(LayoutError):
        PipelineConfig.from_dict({"nope": 1})
    with pytest.raises(LayoutError):
        PipelineConfig.from_dict({"critic": "oracle"})
    with pytest.raises(LayoutError):
        PipelineConfig.from_dict({"score": {"alpha": 0.9}})
    cfg = PipelineConfig.from_dict({})
    assert cfg.critic == "rule" and cfg.assets == "primitives"


def test_pipeline_config_resolves_relative_paths(tmp_path):
    cfg = PipelineConfig.from_dict(
        {"assets": "meshes", "cache_dir": "cache"}, base_dir=tmp_path
    )
    assert cfg.assets == str(tmp_path / "meshes")
    assert cfg.cache_dir == str(tmp_path / "cache")
    # the named sources are never treated as paths
    cfg = PipelineConfig.from_dict({"assets": "cache"}, base_dir=tmp_path)
    assert cfg.assets == "cache"


def test_pipeline_config_from_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"pool": {"margin": 0.2}, "score": {"max_iters": 4}}))
    cfg = PipelineConfig.from_file(path)
    assert cfg.pool.margin == 0.2
    assert cfg.score.max_iters == 4
    with pytest.raises(LayoutError):
        PipelineConfig.from_file(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(LayoutError):
        PipelineConfig.from_file(bad)


def test_build_library_variants(tmp_path):
    assert isinstance(build_library(PipelineConfig()), PrimitiveLibrary)
    cache = build_library(PipelineConfig(assets="cache", cache_dir=str(tmp_path / "c")))
    assert isinstance(cache, AssetCache)
    meshes = tmp_path / "meshes"
    meshes.mkdir()
    (meshes / "bird.glb").write_bytes(gltf.build_glb([("bird", make_primitive("sphere"))]))
    lib = build_library(PipelineConfig(assets=str(meshes)))
    assert isinstance(lib, DirLibrary)
    assert lib.get("bird").vertices.shape[1] == 3


def test_build_client(tmp_path):
    assert build_client(PipelineConfig()) is None
    t = tmp_path / "t.jsonl"
    t.write_text("")
    cfg = PipelineConfig(agent={"mode": "replay", "transcript_path": str(t)})
    client = build_client(cfg)
    assert isinstance(client, AgentClient)


# --------------------------------------------------------------------------
# Saved-layout round trip

def test_layout_json_doc_tilt_only_when_present(tmp_path):
    dsl = (
        "scene: a broom leaning on a wall\n"
        "asset: broom | size=s\n"
        "asset: wall | size=l\n"
        "rel: broom leaning on wall\n"
    )
    res = _run(tmp_path, source=dsl)
    doc = json.loads((res.outdir / "layout.json").read_text())
    by_name = {a["name"]: a for a in doc["assets"]}
    assert by_name["broom"]["tilt"] == {"axis": "y", "deg": 15.0}
    assert "tilt" not in by_name["wall"]


def test_load_saved_layout_round_trip(tmp_path):
    res = _run(tmp_path)
    layout, ground, doc = load_saved_layout(res.outdir / "layout.json")
    assert ground.kind.value == "grass"
    assert doc["score"] == 1.0
    for saved, live in zip(layout.assets, res.layout.assets):
        assert saved.spec_id == live.spec_id
        assert np.allclose(saved.world_vertices(), live.world_vertices(), atol=1e-12)


def test_load_saved_layout_requires_sibling_graph(tmp_path):
    res = _run(tmp_path)
    (res.outdir / "scene_graph.json").unlink()
    with pytest.raises(LayoutError, match="scene_graph.json"):
        load_saved_layout(res.outdir / "layout.json")


def test_load_saved_layout_schema_rejects(tmp_path):
    res = _run(tmp_path)
    path = res.outdir / "layout.json"
    doc = json.loads(path.read_text())
    del doc["score"]
    path.write_text(json.dumps(doc))
    with pytest.raises(LayoutError, match="score"):
        load_saved_layout(path)


def test_load_saved_layout_rejects_unknown_and_missing_ids(tmp_path):
    res = _run(tmp_path)
    path = res.outdir / "layout.json"
    doc = json.loads(path.read_text())

    bad = json.loads(json.dumps(doc))
    bad["assets"][0]["id"] = 99
    path.write_text(json.dumps(bad))
    with pytest.raises(LayoutError):
        load_saved_layout(path)

    short = json.loads(json.dumps(doc))
    short["assets"] = short["assets"][:1]
    path.write_text(json.dumps(short))
    with pytest.raises(LayoutError, match="missing assets"):
        load_saved_layout(path)


def test_layout_json_doc_matches_saved_file(tmp_path):
    res = _run(tmp_path)
    doc = json.loads((res.outdir / "layout.json").read_text())
    trace = doc["trace"]
    from scenepool.ground import GroundKind, GroundPlane

    rebuilt = layout_json_doc(
        res.layout,
        GroundPlane(kind=GroundKind("grass"), height=0.0, extent=12.0),
        res.score,
        trace,
    )
    assert rebuilt == doc
