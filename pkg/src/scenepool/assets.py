"""Triangle meshes, procedural primitives, normalization, and asset sources.

Engine convention throughout: right handed, +z up, ground at z = 0, front
is -y.  A normalized mesh is centered on the z axis in x and y, rests on
z = 0, and has a largest bounding-box extent of exactly 1.

Placed assets carry a rigid transform applied as

    world = R_yaw(z) @ R_tilt @ (scale * v) + translation

so yaw always happens about the world z axis, after any tilt.
"""

from __future__ import annotations

import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scenepool.errors import AssetError


@dataclass
class Mesh:
    """Indexed triangle mesh: vertices (n,3) float64, faces (m,3) int64."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    def copy(self) -> "Mesh":
        return Mesh(self.vertices.copy(), self.faces.copy())


@dataclass(slots=True)
class Tilt:
    axis: str  # "x" or "y"
    deg: float


def rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_axis(axis: str, deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == "z":
        return rot_z(deg)
    raise ValueError(f"unknown rotation axis '{axis}'")


@dataclass
class PlacedAsset:
    """An asset instance with its rigid transform inside the scene.

    ``anchor`` is the translation the coarse placement stage assigned;
    the supervisor measures drift from it, so later stages move the
    asset without touching it.  None means the asset has no positional
    target (orientation-only relations).
    """

    spec_id: int
    name: str
    mesh: Mesh
    scale: float = 1.0
    yaw_deg: float = 0.0
    tilt: Tilt | None = None
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    anchor: np.ndarray | None = None

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.anchor is not None:
            self.anchor = np.asarray(self.anchor, dtype=np.float64).reshape(3)

    def rotation(self) -> np.ndarray:
        r = rot_z(self.yaw_deg)
        if self.tilt is not None:
            r = r @ rot_axis(self.tilt.axis, self.tilt.deg)
        return r

    def world_vertices(self) -> np.ndarray:
        return (self.scale * self.mesh.vertices) @ self.rotation().T + self.translation

    def copy(self) -> "PlacedAsset":
        return PlacedAsset(
            spec_id=self.spec_id,
            name=self.name,
            mesh=self.mesh,
            scale=self.scale,
            yaw_deg=self.yaw_deg,
            tilt=Tilt(self.tilt.axis, self.tilt.deg) if self.tilt else None,
            translation=self.translation.copy(),
            anchor=None if self.anchor is None else self.anchor.copy(),
        )


def merge_meshes(meshes: list[Mesh]) -> Mesh:
    verts = []
    faces = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return Mesh(np.vstack(verts), np.vstack(faces))


def _box(width: float, depth: float, height: float, at=(0.0, 0.0, 0.0)) -> Mesh:
    x, y = width / 2.0, depth / 2.0
    v = np.array(
        [
            [-x, -y, 0.0], [x, -y, 0.0], [x, y, 0.0], [-x, y, 0.0],
            [-x, -y, height], [x, -y, height], [x, y, height], [-x, y, height],
        ]
    ) + np.asarray(at, dtype=np.float64)
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],          # bottom
            [4, 5, 6], [4, 6, 7],          # top
            [0, 1, 5], [0, 5, 4],          # -y
            [2, 3, 7], [2, 7, 6],          # +y
            [3, 0, 4], [3, 4, 7],          # -x
            [1, 2, 6], [1, 6, 5],          # +x
        ]
    )
    return Mesh(v, f)


def _cylinder(radius: float, height: float, segments: int = 24, at=(0.0, 0.0, 0.0)) -> Mesh:
    theta = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    bottom = np.column_stack([ring, np.zeros(segments)])
    top = np.column_stack([ring, np.full(segments, height)])
    centers = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, height]])
    v = np.vstack([bottom, top, centers]) + np.asarray(at, dtype=np.float64)
    cb, ct = 2 * segments, 2 * segments + 1
    f = []
    for i in range(segments):
        j = (i + 1) % segments
        f.append([i, j, segments + j])
        f.append([i, segments + j, segments + i])
        f.append([cb, j, i])
        f.append([ct, segments + i, segments + j])
    return Mesh(v, np.array(f))


def _sphere(radius: float, bands: int = 12, segments: int = 24, at=(0.0, 0.0, 0.0)) -> Mesh:
    verts = [[0.0, 0.0, radius]]
    for k in range(1, bands):
        phi = np.pi * k / bands
        z = radius * np.cos(phi)
        r = radius * np.sin(phi)
        theta = 2.0 * np.pi * np.arange(segments) / segments
        ring = np.column_stack([r * np.cos(theta), r * np.sin(theta), np.full(segments, z)])
        verts.append(ring)
    verts.append([0.0, 0.0, -radius])
    v = np.vstack([np.atleast_2d(np.asarray(b)) for b in verts]) + np.asarray(at, dtype=np.float64)

    south = 1 + (bands - 1) * segments
    ring_start = lambda k: 1 + (k - 1) * segments  # noqa: E731
    f = []
    for j in range(segments):
        jn = (j + 1) % segments
        f.append([0, ring_start(1) + j, ring_start(1) + jn])
        f.append([south, ring_start(bands - 1) + jn, ring_start(bands - 1) + j])
    for k in range(1, bands - 1):
        up, lo = ring_start(k), ring_start(k + 1)
        for j in range(segments):
            jn = (j + 1) % segments
            f.append([up + j, lo + j, lo + jn])
            f.append([up + j, lo + jn, up + jn])
    return Mesh(v, np.array(f))


def _chair() -> Mesh:
    parts = [_box(0.9, 0.9, 0.15, at=(0.0, 0.0, 0.45))]          # seat
    parts.append(_box(0.9, 0.12, 0.8, at=(0.0, 0.39, 0.6)))      # back panel, rear edge
    for sx in (-0.4, 0.4):
        for sy in (-0.4, 0.4):
            parts.append(_box(0.1, 0.1, 0.45, at=(sx, sy, 0.0)))
    return merge_meshes(parts)


def _table() -> Mesh:
    parts = [_box(1.6, 1.0, 0.1, at=(0.0, 0.0, 0.7))]
    for sx in (-0.7, 0.7):
        for sy in (-0.4, 0.4):
            parts.append(_box(0.1, 0.1, 0.7, at=(sx, sy, 0.0)))
    return merge_meshes(parts)


def _tree() -> Mesh:
    trunk = _cylinder(0.15, 1.0, segments=12)
    crown = _sphere(0.6, bands=10, segments=16, at=(0.0, 0.0, 1.4))
    return merge_meshes([trunk, crown])


_PRIMITIVE_BUILDERS = {
    "box": lambda: _box(1.0, 1.0, 1.0),
    "cylinder": lambda: _cylinder(0.5, 1.0),
    "sphere": lambda: _sphere(0.5, at=(0.0, 0.0, 0.5)),
    "chair": _chair,
    "table": _table,
    "tree": _tree,
}

_PRIMITIVE_KEYWORDS = (
    ("sphere", ("sphere", "ball", "orb", "globe")),
    ("tree", ("tree",)),
    ("chair", ("chair",)),
    ("table", ("table", "desk")),
    ("cylinder", ("cylinder", "column", "pillar", "can", "barrel")),
    ("box", ("box", "cube", "crate", "block")),
)


def make_primitive(kind: str) -> Mesh:
    try:
        return _PRIMITIVE_BUILDERS[kind]()
    except KeyError:
        raise AssetError(f"unknown primitive kind '{kind}'") from None


def primitive_kind_for(name: str, desc: str = "") -> str:
    """Pick a primitive for an asset name, falling back to a box."""
    text = f"{name} {desc}".casefold()
    words = set(re.findall(r"[a-z]+", text))
    for kind, keys in _PRIMITIVE_KEYWORDS:
        if words & set(keys):
            return kind
    return "box"


def normalize_mesh(mesh: Mesh) -> Mesh:
    """Center on the z axis, rest on z=0, scale the largest extent to 1."""
    v = mesh.vertices
    if len(v) == 0:
        raise AssetError("cannot normalize an empty mesh")
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise AssetError("cannot normalize a degenerate (zero extent) mesh")
    center = np.array([(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, lo[2]])
    return Mesh((v - center) / extent, mesh.faces.copy())


# Distinct display colors, cycled by asset id; used for export and snapshots.
_PALETTE = (
    (0.85, 0.33, 0.31), (0.33, 0.55, 0.85), (0.38, 0.72, 0.40),
    (0.91, 0.68, 0.26), (0.62, 0.44, 0.79), (0.30, 0.74, 0.71),
    (0.88, 0.48, 0.65), (0.55, 0.57, 0.34), (0.95, 0.52, 0.26),
    (0.42, 0.47, 0.84), (0.60, 0.78, 0.30), (0.72, 0.35, 0.47),
)


def asset_color(spec_id: int) -> tuple[float, float, float]:
    return _PALETTE[(spec_id - 1) % len(_PALETTE)]


def cache_key(name: str) -> str:
    """Filesystem-safe cache key: casefolded, spaces collapsed to '_'."""
    key = re.sub(r"\s+", "_", name.strip().casefold())
    key = re.sub(r"[^a-z0-9_\-]", "", key)
    if not key:
        raise AssetError(f"asset name '{name}' has no usable characters")
    return key


class PrimitiveLibrary:
    """Synthesizes a normalized primitive for any asset name."""

    def get(self, name: str, desc: str = "") -> Mesh:
        return normalize_mesh(make_primitive(primitive_kind_for(name, desc)))


class DirLibrary:
    """Serves normalized meshes from <root>/<key>.glb; unknown names fail."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path_for(self, name: str) -> Path:
        return self.root / f"{cache_key(name)}.glb"

    def get(self, name: str, desc: str = "") -> Mesh:
        from scenepool import gltf  # deferred: gltf imports Mesh from here

        path = self.path_for(name)
        if not path.is_file():
            raise AssetError(f"no asset file for '{name}' (looked for {path})")
        return normalize_mesh(gltf.load_glb(path))


class AssetCache:
    """A DirLibrary that fills itself from a base library on miss.

    Meshes are stored as glb (float32 vertices), and ``get`` always
    returns the stored copy, so the first and every later run see
    bit-identical geometry.
    """

    def __init__(self, root: str | Path, base=None):
        self.root = Path(root)
        self.base = base if base is not None else PrimitiveLibrary()

    def path_for(self, name: str) -> Path:
        return self.root / f"{cache_key(name)}.glb"

    def has(self, name: str) -> bool:
        return self.path_for(name).is_file()

    def store(self, name: str, mesh: Mesh) -> Path:
        from scenepool import gltf

        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path_for(name)
        blob = gltf.build_glb([(name, mesh)])
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".glb.tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)  # atomic publish, no partial files on crash
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    def get(self, name: str, desc: str = "") -> Mesh:
        from scenepool import gltf

        path = self.path_for(name)
        if not path.is_file():
            self.store(name, normalize_mesh(self.base.get(name, desc)))
        return normalize_mesh(gltf.load_glb(path))
