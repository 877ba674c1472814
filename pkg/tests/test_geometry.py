import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenepool.assets import make_primitive, normalize_mesh
from scenepool.geometry import (
    Aabb,
    compute_aabb,
    extract_contour,
    mesh_soup,
    nearest_pair,
    nearest_pair_bruteforce,
    penetration_depth,
)


def test_compute_aabb():
    pts = np.array([[0.0, -1.0, 2.0], [3.0, 1.0, -2.0], [1.0, 0.0, 0.0]])
    box = compute_aabb(pts)
    assert np.array_equal(box.lo, [0.0, -1.0, -2.0])
    assert np.array_equal(box.hi, [3.0, 1.0, 2.0])
    assert np.array_equal(box.extent, [3.0, 2.0, 4.0])
    assert np.array_equal(box.center, [1.5, 0.0, 0.0])
    assert box.max_extent == 4.0
    assert box.min_extent == 2.0


def test_compute_aabb_rejects_empty():
    with pytest.raises(ValueError):
        compute_aabb(np.zeros((0, 3)))


def _box(lo, hi):
    return Aabb(np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))


def test_penetration_depth_cases():
    a = _box([0, 0, 0], [2, 2, 2])
    # overlapping: smallest axis overlap
    assert penetration_depth(a, _box([1.5, 0, 0], [3, 2, 2])) == 0.5
    assert penetration_depth(a, _box([0, 1, 0], [2, 5, 2])) == 1.0
    # touching faces count as separated
    assert penetration_depth(a, _box([2, 0, 0], [3, 2, 2])) == 0.0
    # fully separated
    assert penetration_depth(a, _box([5, 5, 5], [6, 6, 6])) == 0.0
    # containment: depth is the smaller box's smallest extent
    assert penetration_depth(a, _box([0.5, 0.5, 0.5], [1.5, 1.0, 1.5])) == 0.5
    # symmetric
    b = _box([1.5, 0, 0], [3, 2, 2])
    assert penetration_depth(a, b) == penetration_depth(b, a)


# --------------------------------------------------------------------------
# Contour decimation

FROZEN_CONTOUR = {
    "box": (36, 8),
    "cylinder": (288, 50),
    "sphere": (1584, 258),
    "chair": (216, 42),
    "table": (180, 40),
    "tree": (1008, 156),
}


@pytest.mark.parametrize("kind", sorted(FROZEN_CONTOUR))
def test_contour_counts_frozen(kind):
    mesh = normalize_mesh(make_primitive(kind))
    soup = mesh_soup(mesh.vertices, mesh.faces)
    cloud = extract_contour(soup)
    expect_soup, expect_points = FROZEN_CONTOUR[kind]
    assert len(soup) == expect_soup
    assert len(cloud.points) == expect_points
    assert cloud.source_count == expect_soup
    assert len(cloud.points) < expect_soup


def test_contour_strict_reduction_on_shared_vertices():
    # any closed mesh repeats every vertex across faces, so the merge pass
    # alone guarantees a strictly smaller cloud
    for kind in FROZEN_CONTOUR:
        mesh = normalize_mesh(make_primitive(kind))
        soup = mesh_soup(mesh.vertices, mesh.faces)
        assert len(extract_contour(soup).points) < len(soup)


def test_contour_permutation_invariance_exact():
    mesh = normalize_mesh(make_primitive("sphere"))
    soup = mesh_soup(mesh.vertices, mesh.faces)
    base = extract_contour(soup).points
    rng = np.random.default_rng(7)
    for _ in range(5):
        shuffled = soup[rng.permutation(len(soup))]
        assert np.array_equal(extract_contour(shuffled).points, base)


def test_contour_merge_pass_collapses_near_duplicates():
    pts = np.array([[0.0, 0.0, 0.0], [1e-9, 0.0, 0.0], [0.5, 0.5, 0.5]])
    cloud = extract_contour(pts, cell_size=10.0, merge_eps=1e-6)
    # merge collapses the first two; the coarse cell then averages the rest
    assert len(cloud.points) == 1


def test_contour_rejects_bad_input():
    with pytest.raises(ValueError):
        extract_contour(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        extract_contour(np.zeros((4, 3)), cell_size=0.0)
    with pytest.raises(ValueError):
        extract_contour(np.zeros((4, 3)), merge_eps=-1.0)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(10, 400),
    cell=st.floats(0.01, 1.0),
)
def test_contour_properties(seed, n, cell):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-2.0, 2.0, size=(n, 3))
    cloud = extract_contour(pts, cell_size=cell)
    # never grows, and output is order independent
    assert 1 <= len(cloud.points) <= n
    shuffled = pts[rng.permutation(n)]
    assert np.array_equal(extract_contour(shuffled, cell_size=cell).points, cloud.points)
    # every output point is inside the input bounding box
    box = compute_aabb(pts)
    assert (cloud.points >= box.lo - 1e-12).all()
    assert (cloud.points <= box.hi + 1e-12).all()


def test_mesh_soup_expands_faces():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    soup = mesh_soup(verts, faces)
    assert soup.shape == (6, 3)
    assert np.array_equal(soup[0], verts[0])
    assert np.array_equal(soup[5], verts[3])


# --------------------------------------------------------------------------
# Nearest pair vs the brute-force oracle

def test_nearest_pair_simple():
    a = np.array([[0.0, 0, 0], [10, 0, 0]])
    b = np.array([[4.0, 3, 0], [11, 0, 0]])
    pair = nearest_pair(a, b)
    assert (pair.index_a, pair.index_b) == (1, 1)
    assert pair.distance == 1.0


def test_nearest_pair_tie_breaks_lowest_indices():
    # four identical distances; both scans must pick (0, 0)
    a = np.array([[0.0, 0, 0], [0.0, 0, 0]])
    b = np.array([[1.0, 0, 0], [1.0, 0, 0]])
    fast = nearest_pair(a, b)
    slow = nearest_pair_bruteforce(a, b)
    assert (fast.index_a, fast.index_b) == (0, 0)
    assert (slow.index_a, slow.index_b) == (0, 0)


def test_nearest_pair_rejects_empty():
    good = np.zeros((1, 3))
    with pytest.raises(ValueError):
        nearest_pair(np.zeros((0, 3)), good)
    with pytest.raises(ValueError):
        nearest_pair_bruteforce(good, np.zeros((0, 3)))


def test_nearest_pair_crosses_block_boundary():
    # the best match sits past the 256-row block edge
    rng = np.random.default_rng(3)
    a = rng.uniform(5.0, 6.0, size=(600, 3))
    a[517] = [0.0, 0.0, 0.0]
    b = np.array([[0.05, 0.0, 0.0]])
    fast = nearest_pair(a, b)
    slow = nearest_pair_bruteforce(a, b)
    assert fast == slow
    assert fast.index_a == 517


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    na=st.integers(1, 300),
    nb=st.integers(1, 300),
    grid=st.booleans(),
)
def test_nearest_pair_matches_oracle_bit_for_bit(seed, na, nb, grid):
    rng = np.random.default_rng(seed)
    if grid:
        # integer coordinates force many exact ties
        a = rng.integers(-3, 4, size=(na, 3)).astype(np.float64)
        b = rng.integers(-3, 4, size=(nb, 3)).astype(np.float64)
    else:
        a = rng.standard_normal((na, 3))
        b = rng.standard_normal((nb, 3))
    fast = nearest_pair(a, b)
    slow = nearest_pair_bruteforce(a, b)
    assert fast.index_a == slow.index_a
    assert fast.index_b == slow.index_b
    assert fast.distance == slow.distance  # bit identical, no tolerance
