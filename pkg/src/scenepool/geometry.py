"""Geometric primitives: bounding boxes, contour decimation, nearest pairs.

All functions take plain float64 numpy arrays and are deterministic down
to the bit: results never depend on input row order (contours) or on the
scan strategy (nearest pair, verified against a brute-force oracle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(slots=True)
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    @property
    def max_extent(self) -> float:
        return float(self.extent.max())

    @property
    def min_extent(self) -> float:
        return float(self.extent.min())


def compute_aabb(points: np.ndarray) -> Aabb:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot compute the bounding box of an empty point set")
    return Aabb(pts.min(axis=0), pts.max(axis=0))


def penetration_depth(a: Aabb, b: Aabb) -> float:
    """Smallest axis overlap between two boxes; 0 when separated or touching."""
    overlap = np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo)
    if np.all(overlap > 0.0):
        return float(overlap.min())
    return 0.0


@dataclass(slots=True)
class ContourCloud:
    """Decimated stand-in for an asset surface used by the magnet."""

    points: np.ndarray
    cell_size: float
    merge_eps: float
    source_count: int


def _cluster(points: np.ndarray, eps: float) -> np.ndarray:
    """Snap points to an eps grid and average each occupied cell.

    Points are value-sorted first so the per-cell accumulation order (and
    with it every output bit) is independent of input row order.
    """
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    pts = points[order]
    keys = np.floor(pts / eps).astype(np.int64)
    cells, inverse = np.unique(keys, axis=0, return_inverse=True)
    sums = np.zeros((len(cells), 3))
    np.add.at(sums, inverse.reshape(-1), pts)
    counts = np.bincount(inverse.reshape(-1), minlength=len(cells)).astype(np.float64)
    return sums / counts[:, None]


def extract_contour(
    points: np.ndarray, cell_size: float = 0.05, merge_eps: float = 1e-6,
) -> ContourCloud:
    """Decimate a point soup into a coarse contour cloud.

    Two passes: a merge pass that collapses coincident points (triangle
    soups repeat every shared vertex), then the actual grid decimation.
    For any input with repeated points the result is strictly smaller.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot extract a contour from an empty point set")
    if not (cell_size > 0.0 and merge_eps > 0.0):
        raise ValueError("cell_size and merge_eps must be positive")
    merged = _cluster(pts, merge_eps)
    reduced = _cluster(merged, cell_size)
    return ContourCloud(
        points=reduced, cell_size=cell_size, merge_eps=merge_eps, source_count=len(pts),
    )


def mesh_soup(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Expand an indexed mesh into its triangle-corner point soup."""
    return np.asarray(vertices, dtype=np.float64)[np.asarray(faces, dtype=np.int64)].reshape(-1, 3)


@dataclass(slots=True)
class NearestPair:
    index_a: int
    index_b: int
    distance: float


def nearest_pair_bruteforce(a: np.ndarray, b: np.ndarray) -> NearestPair:
    """Exhaustive reference scan: one row of A against all of B at a time.

    Ties resolve to the lowest index_a, then the lowest index_b.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("nearest pair needs two non-empty point sets")
    best_d2 = math.inf
    best = (-1, -1)
    for i in range(len(a)):
        d2 = ((b - a[i]) ** 2).sum(axis=1)
        j = int(d2.argmin())
        if d2[j] < best_d2:
            best_d2 = float(d2[j])
            best = (i, j)
    return NearestPair(best[0], best[1], math.sqrt(best_d2))


def nearest_pair(a: np.ndarray, b: np.ndarray) -> NearestPair:
    """Nearest pair of points between two clouds, oracle-identical.

    Blocked scan over A (bounded memory).  Every squared distance is
    computed with the same expression as the brute-force oracle and ties
    break the same way, so results match it bit for bit.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("nearest pair needs two non-empty point sets")
    best_d2 = math.inf
    best = (-1, -1)
    block = 256
    for start in range(0, len(a), block):
        chunk = a[start: start + block]
        d2 = ((b[None, :, :] - chunk[:, None, :]) ** 2).sum(axis=-1)
        row_j = d2.argmin(axis=1)
        row_d2 = d2[np.arange(len(chunk)), row_j]
        i_local = int(row_d2.argmin())
        if row_d2[i_local] < best_d2:
            best_d2 = float(row_d2[i_local])
            best = (start + i_local, int(row_j[i_local]))
    return NearestPair(best[0], best[1], math.sqrt(best_d2))
