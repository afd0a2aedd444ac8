"""Domain errors raised by the geometry modules."""


class OddGeomError(Exception):
    """Base class for domain errors (the CLI maps these to exit code 1)."""


class EvaluationFailure(OddGeomError):
    pass


class MetricFormatError(OddGeomError, ValueError):
    pass


class DegenerateFrame(OddGeomError):
    pass


class FrameMismatch(OddGeomError, ValueError):
    pass


class QuadratureFailure(OddGeomError):
    pass


class PoleOnLocus(OddGeomError):
    pass


class UnboundedSpeed(OddGeomError):
    pass


class DegenerateSegment(OddGeomError):
    pass


class TangentPoleContradiction(OddGeomError):
    pass


class StallAtSingularity(OddGeomError):
    pass


class SingularStart(OddGeomError):
    """Start point where the cleared field vanishes; see ``radial_directions``."""

    def __init__(self, message, directions=()):
        super().__init__(message)
        self.directions = list(directions)


class NotMonotone(OddGeomError):
    pass


class UnreachableWithinBox(OddGeomError):
    pass


class UnknownFixture(OddGeomError, KeyError):
    pass


class NotPlanar(OddGeomError):
    pass
