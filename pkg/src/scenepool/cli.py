"""Command line interface.

    scenepool parse  scene.dsl [-o DIR]
    scenepool layout scene.dsl|scene_graph.json [--critic rule|llm]
                     [--assets primitives|cache|DIR] [-c config.json] [-o DIR]
    scenepool score  layout.json [--assets ...] [-c config.json]
    scenepool render layout.json [--assets ...] [-c config.json] [-o DIR]
    scenepool export layout.json -o scene.glb [--assets ...] [-c config.json]

Exit codes: 0 success (layout: threshold reached), 2 scene text rejected,
3 layout finished below the rationality threshold, 1 any other failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from scenepool import gltf, pipeline, supervision
from scenepool.errors import DslError, ScenepoolError
from scenepool.scene_graph import dump_graph, load_graph, parse_dsl


def _load_config(args) -> pipeline.PipelineConfig:
    if getattr(args, "config", None):
        cfg = pipeline.PipelineConfig.from_file(args.config)
    else:
        cfg = pipeline.PipelineConfig()
    if getattr(args, "assets", None):
        cfg.assets = args.assets
    if getattr(args, "critic", None):
        cfg.critic = args.critic
    return cfg


def _read_source(path: Path):
    """DSL text or an already-extracted scene graph, by file extension."""
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return load_graph(text)
    return text


def cmd_parse(args) -> int:
    path = Path(args.scene)
    try:
        graph = parse_dsl(path.read_text(encoding="utf-8"))
    except DslError as e:
        print(f"error: {e}", file=sys.stderr)
        return pipeline.EXIT_DSL
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    out = outdir / "scene_graph.json"
    out.write_text(dump_graph(graph), encoding="utf-8")
    print(f"{len(graph.assets)} asset(s), {len(graph.relations)} relation(s) -> {out}")
    return pipeline.EXIT_OK


def cmd_layout(args) -> int:
    cfg = _load_config(args)
    try:
        source = _read_source(Path(args.scene))
    except ScenepoolError as e:
        print(f"error: {e}", file=sys.stderr)
        return pipeline.EXIT_DSL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return pipeline.EXIT_ERROR
    result = pipeline.run_pipeline(source, Path(args.outdir), cfg)
    if result.error:
        print(f"error: {result.error}", file=sys.stderr)
    if result.score is not None:
        reason = result.terminal_reason or "aborted"
        print(f"score {result.score:.4f} ({reason})")
    for name in sorted(result.artifacts):
        print(f"  {result.artifacts[name]}")
    return result.exit_code


def cmd_score(args) -> int:
    cfg = _load_config(args)
    layout, _ground, _doc = pipeline.load_saved_layout(args.layout, cfg)
    score, reports = supervision.score_layout(layout, cfg.score)
    print(f"score {score:.6f}")
    for r in reports:
        flag = "" if r.clean() else "  <- violation"
        print(
            f"  asset {r.asset_id}: penetration {r.penetration:.4f} "
            f"floating {r.floating:.4f} drift {r.drift:.4f}{flag}"
        )
    return pipeline.EXIT_OK


def cmd_render(args) -> int:
    cfg = _load_config(args)
    layout, ground, _doc = pipeline.load_saved_layout(args.layout, cfg)
    outdir = Path(args.outdir) if args.outdir else Path(args.layout).parent
    outdir.mkdir(parents=True, exist_ok=True)
    snaps = supervision.render_snapshots(layout, ground)
    for _view, path in sorted(snaps.save(outdir).items()):
        print(path)
    return pipeline.EXIT_OK


def cmd_export(args) -> int:
    cfg = _load_config(args)
    layout, ground, _doc = pipeline.load_saved_layout(args.layout, cfg)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(gltf.export_scene_glb(layout.assets, ground))
    print(out)
    return pipeline.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenepool",
        description="Physics-guided compositional 3D scene layout.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, outdir_default=None):
        p.add_argument("-c", "--config", help="pipeline config JSON")
        p.add_argument(
            "--assets",
            help="asset source: primitives, cache, or a directory of .glb files",
        )
        if outdir_default is not None:
            p.add_argument("-o", "--outdir", default=outdir_default, help="output directory")

    p = sub.add_parser("parse", help="parse scene DSL to scene_graph.json")
    p.add_argument("scene", help="scene DSL file")
    p.add_argument("-o", "--outdir", default=".", help="output directory")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("layout", help="run the full layout pipeline")
    p.add_argument("scene", help="scene DSL file or scene_graph.json")
    p.add_argument("--critic", choices=["rule", "llm"], help="refinement critic")
    common(p, outdir_default="out")
    p.set_defaults(func=cmd_layout)

    p = sub.add_parser("score", help="score a saved layout.json")
    p.add_argument("layout", help="layout.json path")
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("render", help="render snapshots of a saved layout.json")
    p.add_argument("layout", help="layout.json path")
    common(p)
    p.add_argument("-o", "--outdir", help="output directory (default: beside layout.json)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("export", help="export a saved layout.json to glb")
    p.add_argument("layout", help="layout.json path")
    p.add_argument("-o", "--output", required=True, help="output .glb path")
    common(p)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenepoolError as e:
        print(f"error: {e}", file=sys.stderr)
        return pipeline.EXIT_ERROR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return pipeline.EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
