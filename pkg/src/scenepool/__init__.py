"""Physics-guided compositional 3D scene layout.

Turns a small scene-description DSL into a placed, scored, exportable 3D
scene: parse to a scene graph, place assets by canonical spatial relations,
pull nearly-touching pairs into contact, then score and refine the result
until it passes a rationality threshold.
"""

from scenepool.errors import (
    DslError,
    SceneGraphError,
    AgentError,
    AssetError,
    GltfError,
    LayoutError,
    RefineError,
)

__version__ = "0.1.0"

__all__ = [
    "DslError",
    "SceneGraphError",
    "AgentError",
    "AssetError",
    "GltfError",
    "LayoutError",
    "RefineError",
    "__version__",
]
