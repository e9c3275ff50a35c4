"""Exception and warning types raised across the package."""


class DrapeGeomError(ValueError):
    """Base class for every validation error raised by drapegeom."""


class IndexOutOfRange(DrapeGeomError):
    pass


class DegenerateTriangle(DrapeGeomError):
    pass


class NoEdges(DrapeGeomError):
    pass


class EmptyPointSet(DrapeGeomError):
    pass


class KTooLarge(DrapeGeomError):
    pass


class VertexCountMismatch(DrapeGeomError):
    pass


class FaceCountMismatch(DrapeGeomError):
    pass


class TopologyMismatch(DrapeGeomError):
    pass


class EmptyTwoRing(DrapeGeomError):
    pass


class NonFiniteLoss(DrapeGeomError):
    def __init__(self, message, result=None):
        super().__init__(message)
        # partial RefineResult, so callers can inspect the trace up to the failure
        self.result = result


class DegenerateScene(DrapeGeomError):
    pass


class DegenerateBoundingBox(DrapeGeomError):
    pass


class ConfigError(DrapeGeomError):
    pass


class ParseError(DrapeGeomError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class MeshWarning(UserWarning):
    """Non-fatal mesh quality issue (zero-area faces, non-manifold edges)."""


class UnsupportedFeature(UserWarning):
    """File feature that is read past and ignored (materials, quads, ...)."""
