"""Exception types raised across the package."""


class CtrError(Exception):
    """Base class for all package errors."""


class NonSimplePolygon(CtrError, ValueError):
    pass


class BadCorners(CtrError, ValueError):
    pass


class TooFewVertices(CtrError, ValueError):
    pass


class RefinementFailure(CtrError, RuntimeError):
    pass


class PointOutsideMesh(CtrError, ValueError):
    pass


class DegenerateSide(CtrError, ValueError):
    pass


class SolverDivergence(CtrError, RuntimeError):
    pass


class NonBijectiveMap(CtrError, RuntimeError):
    pass


class ZeroVector(CtrError, ValueError):
    pass


class EmptyInstance(CtrError, ValueError):
    pass


class ModelFeatureMismatch(CtrError, ValueError):
    pass


class SingleClassData(CtrError, ValueError):
    pass


class InsufficientData(CtrError, ValueError):
    pass


class SelfIntersectingParams(CtrError, ValueError):
    pass


class FormatError(CtrError, ValueError):
    """Malformed annotation, feature map or model file."""
