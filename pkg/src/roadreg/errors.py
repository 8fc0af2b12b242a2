"""Exception types shared across the package."""


class RoadregError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(RoadregError):
    pass


class EmptyCloud(RoadregError):
    pass


class BoundsError(RoadregError):
    pass


class NearPiRotation(RoadregError):
    pass


class BehindCamera(RoadregError):
    pass


class DegenerateGeometry(RoadregError):
    pass


class ParallelRay(RoadregError):
    pass


class NegativeDepth(RoadregError):
    pass


class BackendUnavailable(RoadregError):
    pass


class InsufficientCorrespondences(RoadregError):
    pass


class NoConsensus(RoadregError):
    pass


class NoYawSucceeded(RoadregError):
    """No sampled yaw direction produced enough PnP inliers; registration failed."""


class DimensionMismatch(RoadregError):
    pass


class EmptyEdgeSet(RoadregError):
    pass


class DegeneratePixels(RoadregError):
    pass


class NoAssociations(RoadregError):
    pass


class DivergedPose(RoadregError):
    pass


class NoCorrespondence(RoadregError):
    pass


class ConfigError(RoadregError):
    pass
