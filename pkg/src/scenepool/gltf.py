"""Minimal binary glTF 2.0 (.glb) writer and reader.

Only what the pipeline needs: indexed triangle meshes, flat node lists
with TRS transforms, and solid-color materials.  No textures, skins,
animations, or extensions; Draco-compressed primitives are rejected.

glTF is +Y up while the engine is +Z up.  The fixed change of basis

    gltf(x, y, z) = (engine.x, engine.z, -engine.y)

is applied to vertices and node transforms on export and undone on
import, so geometry round-trips identically in engine space.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scenepool.assets import Mesh, PlacedAsset, asset_color
from scenepool.errors import GltfError
from scenepool.ground import GROUND_COLORS, GroundPlane

_MAGIC = 0x46546C67
_CHUNK_JSON = 0x4E4F534A
_CHUNK_BIN = 0x004E4942

# engine -> gltf basis change (proper rotation, inverse is the transpose)
_C = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])

_COMPONENT_DTYPES = {
    5121: np.dtype("<u1"),
    5123: np.dtype("<u2"),
    5125: np.dtype("<u4"),
    5126: np.dtype("<f4"),
}


def _quat_from_matrix(r: np.ndarray) -> list[float]:
    """Rotation matrix to glTF [x, y, z, w] quaternion."""
    t = r[0, 0] + r[1, 1] + r[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        x = 0.25 * s
        w = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        y = 0.25 * s
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        z = 0.25 * s
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
    return [float(x), float(y), float(z), float(w)]


def _matrix_from_quat(q) -> np.ndarray:
    x, y, z, w = (float(c) for c in q)
    n = math.sqrt(x * x + y * y + z * z + w * w)
    if n == 0.0:
        raise GltfError("zero-length rotation quaternion")
    x, y, z, w = x / n, y / n, z / n, w / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


class _Builder:
    def __init__(self):
        self.blob = bytearray()
        self.views: list[dict] = []
        self.accessors: list[dict] = []
        self.meshes: list[dict] = []
        self.materials: list[dict] = []
        self.nodes: list[dict] = []

    def _view(self, data: bytes, target: int) -> int:
        while len(self.blob) % 4:
            self.blob.append(0)
        self.views.append(
            {"buffer": 0, "byteOffset": len(self.blob), "byteLength": len(data), "target": target}
        )
        self.blob.extend(data)
        return len(self.views) - 1

    def add_material(self, name: str, rgb: tuple[float, float, float]) -> int:
        self.materials.append(
            {
                "name": name,
                "pbrMetallicRoughness": {
                    "baseColorFactor": [round(float(c), 6) for c in rgb] + [1.0],
                    "metallicFactor": 0.0,
                    "roughnessFactor": 0.9,
                },
            }
        )
        return len(self.materials) - 1

    def add_mesh(self, name: str, mesh: Mesh, material: int | None) -> int:
        pos = (mesh.vertices @ _C.T).astype("<f4")
        idx = mesh.faces.reshape(-1).astype("<u4")
        pv = self._view(pos.tobytes(), 34962)
        iv = self._view(idx.tobytes(), 34963)
        self.accessors.append(
            {
                "bufferView": pv,
                "componentType": 5126,
                "count": len(pos),
                "type": "VEC3",
                "min": [float(v) for v in pos.min(axis=0)],
                "max": [float(v) for v in pos.max(axis=0)],
            }
        )
        pa = len(self.accessors) - 1
        self.accessors.append(
            {"bufferView": iv, "componentType": 5125, "count": len(idx), "type": "SCALAR"}
        )
        ia = len(self.accessors) - 1
        prim = {"attributes": {"POSITION": pa}, "indices": ia, "mode": 4}
        if material is not None:
            prim["material"] = material
        self.meshes.append({"name": name, "primitives": [prim]})
        return len(self.meshes) - 1

    def add_node(
        self,
        name: str,
        mesh_index: int,
        translation: np.ndarray,
        rotation: np.ndarray,
        scale: float,
    ) -> int:
        t = _C @ np.asarray(translation, dtype=np.float64)
        r = _C @ np.asarray(rotation, dtype=np.float64) @ _C.T
        self.nodes.append(
            {
                "name": name,
                "mesh": mesh_index,
                "translation": [float(v) for v in t],
                "rotation": _quat_from_matrix(r),
                "scale": [float(scale)] * 3,
            }
        )
        return len(self.nodes) - 1

    def finish(self) -> bytes:
        doc = {
            "asset": {"version": "2.0", "generator": "scenepool"},
            "scene": 0,
            "scenes": [{"nodes": list(range(len(self.nodes)))}],
            "nodes": self.nodes,
            "meshes": self.meshes,
            "accessors": self.accessors,
            "bufferViews": self.views,
            "buffers": [{"byteLength": len(self.blob)}],
        }
        if self.materials:
            doc["materials"] = self.materials
        while len(self.blob) % 4:
            self.blob.append(0)
        payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        while len(payload) % 4:
            payload += b" "
        total = 12 + 8 + len(payload) + 8 + len(self.blob)
        out = bytearray()
        out += struct.pack("<III", _MAGIC, 2, total)
        out += struct.pack("<II", len(payload), _CHUNK_JSON) + payload
        out += struct.pack("<II", len(self.blob), _CHUNK_BIN) + bytes(self.blob)
        return bytes(out)


def build_glb(named_meshes: list[tuple[str, Mesh]]) -> bytes:
    """Pack meshes at identity nodes (asset cache storage format)."""
    b = _Builder()
    identity = np.eye(3)
    for name, mesh in named_meshes:
        mi = b.add_mesh(name, mesh, material=None)
        b.add_node(name, mi, np.zeros(3), identity, 1.0)
    return b.finish()


def _ground_mesh(ground: GroundPlane) -> Mesh:
    e = ground.extent / 2.0
    z = ground.height
    v = np.array([[-e, -e, z], [e, -e, z], [e, e, z], [-e, e, z]])
    return Mesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def export_scene_glb(placed: list[PlacedAsset], ground: GroundPlane | None = None) -> bytes:
    """Serialize a placed scene: one node per asset plus a ground quad."""
    b = _Builder()
    for p in placed:
        mat = b.add_material(f"{p.name}_material", asset_color(p.spec_id))
        mi = b.add_mesh(p.name, p.mesh, mat)
        b.add_node(p.name, mi, p.translation, p.rotation(), p.scale)
    if ground is not None:
        mat = b.add_material(ground.kind.value, GROUND_COLORS[ground.kind])
        mi = b.add_mesh("ground", _ground_mesh(ground), mat)
        b.add_node("ground", mi, np.zeros(3), np.eye(3), 1.0)
    return b.finish()


def _split_chunks(blob: bytes) -> tuple[dict, bytes]:
    if len(blob) < 12:
        raise GltfError("file too short to be glb")
    magic, version, total = struct.unpack_from("<III", blob, 0)
    if magic != _MAGIC:
        raise GltfError("bad magic: not a binary glTF file")
    if version != 2:
        raise GltfError(f"unsupported glTF version {version}")
    if total > len(blob):
        raise GltfError("file truncated")
    offset = 12
    doc: dict | None = None
    binary = b""
    while offset + 8 <= total:
        length, kind = struct.unpack_from("<II", blob, offset)
        offset += 8
        chunk = blob[offset: offset + length]
        if len(chunk) < length:
            raise GltfError("chunk truncated")
        offset += length
        if kind == _CHUNK_JSON and doc is None:
            try:
                doc = json.loads(chunk.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise GltfError(f"bad JSON chunk: {e}") from None
        elif kind == _CHUNK_BIN and not binary:
            binary = chunk
    if doc is None:
        raise GltfError("no JSON chunk found")
    return doc, binary


def _read_accessor(doc: dict, binary: bytes, index: int) -> np.ndarray:
    try:
        acc = doc["accessors"][index]
    except (KeyError, IndexError):
        raise GltfError(f"missing accessor {index}") from None
    if "sparse" in acc:
        raise GltfError("sparse accessors are not supported")
    dtype = _COMPONENT_DTYPES.get(acc.get("componentType"))
    if dtype is None:
        raise GltfError(f"unsupported component type {acc.get('componentType')}")
    ncomp = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4}.get(acc.get("type"))
    if ncomp is None:
        raise GltfError(f"unsupported accessor type {acc.get('type')}")
    count = int(acc["count"])
    view = doc["bufferViews"][acc["bufferView"]]
    start = int(view.get("byteOffset", 0)) + int(acc.get("byteOffset", 0))
    stride = int(view.get("byteStride", 0)) or dtype.itemsize * ncomp
    need = start + stride * (count - 1) + dtype.itemsize * ncomp
    if need > len(binary):
        raise GltfError("accessor data runs past the binary chunk")
    if stride == dtype.itemsize * ncomp:
        flat = np.frombuffer(binary, dtype=dtype, count=count * ncomp, offset=start)
        return flat.reshape(count, ncomp) if ncomp > 1 else flat
    rows = []
    for i in range(count):
        o = start + i * stride
        rows.append(np.frombuffer(binary, dtype=dtype, count=ncomp, offset=o))
    out = np.vstack(rows)
    return out if ncomp > 1 else out.reshape(-1)


def _decode_mesh(doc: dict, binary: bytes, mesh_index: int) -> Mesh:
    mesh_doc = doc["meshes"][mesh_index]
    verts: list[np.ndarray] = []
    faces: list[np.ndarray] = []
    offset = 0
    for prim in mesh_doc.get("primitives", []):
        if "KHR_draco_mesh_compression" in prim.get("extensions", {}):
            raise GltfError("Draco-compressed meshes are not supported")
        if prim.get("mode", 4) != 4:
            raise GltfError(f"primitive mode {prim.get('mode')} is not triangles")
        attrs = prim.get("attributes", {})
        if "POSITION" not in attrs:
            raise GltfError("primitive has no POSITION attribute")
        pos = _read_accessor(doc, binary, attrs["POSITION"]).astype(np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise GltfError("POSITION accessor is not VEC3")
        if "indices" in prim:
            idx = _read_accessor(doc, binary, prim["indices"]).astype(np.int64)
        else:
            idx = np.arange(len(pos), dtype=np.int64)
        if len(idx) % 3:
            raise GltfError("index count is not a multiple of 3")
        if len(idx) and (idx.min() < 0 or idx.max() >= len(pos)):
            raise GltfError("index out of range")
        verts.append(pos @ _C)  # gltf -> engine: v @ C == C.T @ v
        faces.append(idx.reshape(-1, 3) + offset)
        offset += len(pos)
    if not verts:
        raise GltfError(f"mesh {mesh_index} has no primitives")
    return Mesh(np.vstack(verts), np.vstack(faces))


def load_glb(path: str | Path) -> Mesh:
    """Read the first mesh of a glb file as raw engine-space geometry."""
    doc, binary = _split_chunks(Path(path).read_bytes())
    if not doc.get("meshes"):
        raise GltfError("glb contains no meshes")
    return _decode_mesh(doc, binary, 0)


@dataclass(slots=True)
class GlbNode:
    name: str
    mesh: Mesh
    translation: np.ndarray
    rotation: np.ndarray
    scale: float


def read_glb_scene(path: str | Path) -> list[GlbNode]:
    """Read every mesh node of the default scene, transforms in engine space."""
    doc, binary = _split_chunks(Path(path).read_bytes())
    scenes = doc.get("scenes", [])
    if not scenes:
        raise GltfError("glb has no scenes")
    scene = scenes[doc.get("scene", 0)]
    out: list[GlbNode] = []
    for ni in scene.get("nodes", []):
        node = doc["nodes"][ni]
        if "matrix" in node:
            raise GltfError("matrix nodes are not supported")
        if "mesh" not in node:
            continue
        sc = node.get("scale", [1.0, 1.0, 1.0])
        if abs(sc[0] - sc[1]) > 1e-9 or abs(sc[0] - sc[2]) > 1e-9:
            raise GltfError("non-uniform node scale is not supported")
        r_g = _matrix_from_quat(node.get("rotation", [0.0, 0.0, 0.0, 1.0]))
        t_g = np.asarray(node.get("translation", [0.0, 0.0, 0.0]), dtype=np.float64)
        out.append(
            GlbNode(
                name=node.get("name", f"node{ni}"),
                mesh=_decode_mesh(doc, binary, node["mesh"]),
                translation=_C.T @ t_g,
                rotation=_C.T @ r_g @ _C,
                scale=float(sc[0]),
            )
        )
    return out
