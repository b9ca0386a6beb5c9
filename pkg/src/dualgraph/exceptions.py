class DualGraphError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(DualGraphError, ValueError):
    """Invalid or inconsistent configuration."""


class GraphError(DualGraphError):
    pass


class DuplicateLandmarkError(GraphError, ValueError):
    pass


class StructuralError(GraphError):
    """Edge and node kinds do not match, or an edge references a missing node."""


class GaugeError(GraphError):
    """Some free variables have no path to a fixed node."""


class StampOrderError(DualGraphError, ValueError):
    pass


class DegenerateAlignmentError(DualGraphError, ValueError):
    pass


class StreamFormatError(DualGraphError, ValueError):
    def __init__(self, path, lineno, message):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")
