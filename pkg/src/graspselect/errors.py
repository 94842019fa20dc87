"""Exception hierarchy shared across the pipeline.

Every error carries a stable ``tag`` string so that the service layer and the
CLI can map failures to structured responses and exit codes without string
matching on messages.
"""


class GraspSelectError(Exception):
    """Base class for all pipeline errors."""

    tag = "Error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.tag)


class ConfigError(GraspSelectError):
    tag = "ConfigError"


# --- geometry ---------------------------------------------------------------

class DimensionMismatch(GraspSelectError):
    tag = "DimensionMismatch"


class BehindCamera(GraspSelectError):
    tag = "BehindCamera"


class InvalidPose(GraspSelectError):
    tag = "InvalidPose"


# --- candidates -------------------------------------------------------------

class NoGraspExists(GraspSelectError):
    tag = "NoGraspExists"


class ParseError(GraspSelectError):
    tag = "ParseError"


# --- clustering -------------------------------------------------------------

class TooFewPoints(GraspSelectError):
    tag = "TooFewPoints"


class SingleCluster(GraspSelectError):
    tag = "SingleCluster"


# --- prompting --------------------------------------------------------------

class OutOfBounds(GraspSelectError):
    tag = "OutOfBounds"


class TooManyCandidates(GraspSelectError):
    tag = "TooManyCandidates"


class UnparseableReply(GraspSelectError):
    tag = "UnparseableReply"


class AmbiguousReply(GraspSelectError):
    tag = "AmbiguousReply"


class IndexOutOfRange(GraspSelectError):
    tag = "IndexOutOfRange"


class PointOutOfImage(GraspSelectError):
    tag = "PointOutOfImage"


# --- vlm bridge -------------------------------------------------------------

class VlmTimeout(GraspSelectError):
    tag = "Timeout"


class TransportError(GraspSelectError):
    tag = "TransportError"


class AuthError(GraspSelectError):
    tag = "AuthError"


class ModelError(GraspSelectError):
    tag = "ModelError"


class VlmPointOffObject(GraspSelectError):
    tag = "VlmPointOffObject"


class EmptyInput(GraspSelectError):
    tag = "EmptyInput"


# --- view selection / harness ----------------------------------------------

class DetectorFailure(GraspSelectError):
    tag = "DetectorFailure"


class UnknownRegion(GraspSelectError):
    tag = "UnknownRegion"
