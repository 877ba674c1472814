"""Exception types shared across the package."""


class ScenepoolError(Exception):
    """Base class for all package errors."""


class DslError(ScenepoolError):
    """Scene DSL text failed to parse.

    Carries the 1-based source line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SceneGraphError(ScenepoolError):
    """A scene-graph document violated the schema or an invariant."""


class AgentError(ScenepoolError):
    """An agent call failed: transport error, bad payload, or replay miss."""


class AssetError(ScenepoolError):
    """Asset lookup, synthesis, or cache access failed."""


class GltfError(ScenepoolError):
    """A glb file could not be read or did not contain usable geometry."""


class LayoutError(ScenepoolError):
    """Placement could not satisfy a relation or config constraint."""


class RefineError(ScenepoolError):
    """The supervision loop failed mid-flight (e.g. critic call error).

    The partial trace, when available, is attached as ``trace``.
    """

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)
