"""Shared builders for the test suite.

Everything here is deterministic: the transcript regeneration script and
the replay tests both build the bird/chair fixture through this module,
so recorded request hashes stay valid.
"""

from pathlib import Path

import numpy as np

from scenepool.assets import Mesh, PrimitiveLibrary
from scenepool.ground import select_ground
from scenepool.physical_pool import (
    PoolConfig,
    canonicalize_graph,
    coarse_place,
    run_magnet,
    scale_assets,
)
from scenepool.scene_graph import parse_dsl
from scenepool.supervision import ScoreConfig

DATA_DIR = Path(__file__).resolve().parent / "data"
TRANSCRIPT_PATH = DATA_DIR / "transcripts.jsonl"

BIRD_CHAIR_DSL = """\
scene: A bird standing on a chair in the garden
asset: bird | size=s | desc="a small songbird"
asset: chair | size=m
rel: bird standing on chair
"""

# Free text fed to the recorded extraction agent.
EXTRACT_TEXT = "A bird standing on a chair in the garden"

# Phrase the keyword table cannot classify; the recorded agent answers "on".
UNKNOWN_PHRASE = "hovering over"

EXTRACT_GRAPH_DOC = {
    "description": EXTRACT_TEXT,
    "assets": [
        {"id": 1, "name": "bird", "enriched_desc": "a small songbird", "size": "small"},
        {"id": 2, "name": "chair", "enriched_desc": "a wooden garden chair", "size": "medium"},
    ],
    "relations": [{"subject": 1, "relation": "standing on", "target": 2}],
    "special": "none",
    "ground": "grass",
}


def build_magnetized(dsl: str = BIRD_CHAIR_DSL, pool: PoolConfig | None = None):
    """Parse, canonicalize, place and magnetize a scene; no agent involved."""
    pool = pool or PoolConfig()
    graph = parse_dsl(dsl)
    canonical = canonicalize_graph(graph, None)
    placed = scale_assets(graph, PrimitiveLibrary(), pool)
    layout = coarse_place(graph, placed, canonical, pool)
    steps = run_magnet(layout, canonical, pool)
    ground = select_ground(graph.description, graph.ground)
    return layout, ground, canonical, steps


def refine_fixture():
    """The layout, ground and config the recorded critic session uses.

    The threshold sits above the magnetized bird/chair score so the
    refinement loop actually consults the critic.
    """
    layout, ground, _canonical, _steps = build_magnetized()
    config = ScoreConfig(rationality_threshold=0.99)
    return layout, ground, config


def restoring_moves(layout):
    """Moves that put every drifted asset back on its anchor."""
    moves = []
    for asset in layout.assets:
        if asset.anchor is None:
            continue
        delta = asset.anchor - asset.translation
        if float(np.linalg.norm(delta)) > 1e-9:
            moves.append({"id": asset.spec_id, "move": [float(x) for x in delta]})
    return moves


def box_mesh(w=1.0, d=1.0, h=1.0) -> Mesh:
    """Axis-aligned closed box: footprint centered on xy, base at z=0."""
    x, y = w / 2.0, d / 2.0
    verts = np.array(
        [
            [-x, -y, 0.0], [x, -y, 0.0], [x, y, 0.0], [-x, y, 0.0],
            [-x, -y, h], [x, -y, h], [x, y, h], [-x, y, h],
        ]
    )
    faces = np.array(
        [
            [0, 2, 1], [0, 3, 2],
            [4, 5, 6], [4, 6, 7],
            [0, 1, 5], [0, 5, 4],
            [1, 2, 6], [1, 6, 5],
            [2, 3, 7], [2, 7, 6],
            [3, 0, 4], [3, 4, 7],
        ],
        dtype=np.int64,
    )
    return Mesh(verts, faces)
