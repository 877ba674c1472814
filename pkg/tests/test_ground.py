import pytest

from scenepool.ground import GROUND_COLORS, GroundKind, select_ground


@pytest.mark.parametrize(
    "text, kind",
    [
        ("a bird in the garden", GroundKind.GRASS),
        ("a picnic on the lawn of the park", GroundKind.GRASS),
        ("a lamp on a desk in the office", GroundKind.WOOD),
        ("an indoor reading corner", GroundKind.WOOD),
        ("a castle on the beach", GroundKind.SAND),
        ("dunes in the desert", GroundKind.SAND),
    ],
)
def test_keyword_selection(text, kind):
    assert select_ground(text).kind is kind


def test_hint_overrides_keywords():
    g = select_ground("a castle on the beach", hint="wood")
    assert g.kind is GroundKind.WOOD


def test_vote_count_wins():
    g = select_ground("a sandy beach towel drying near the garden shore")
    # sand keywords (sandy, beach, shore) outnumber grass (garden)
    assert g.kind is GroundKind.SAND


def test_tie_priority_grass_first():
    assert select_ground("a kitchen view of the meadow").kind is GroundKind.GRASS
    assert select_ground("no scenery words at all").kind is GroundKind.GRASS


def test_plane_parameters():
    g = select_ground("anything", height=0.5, extent=20.0)
    assert g.height == 0.5
    assert g.extent == 20.0
    d = select_ground("anything")
    assert d.height == 0.0
    assert d.extent == 12.0


def test_every_kind_has_a_color():
    for kind in GroundKind:
        color = GROUND_COLORS[kind]
        assert len(color) == 3
        assert all(0.0 <= c <= 1.0 for c in color)
