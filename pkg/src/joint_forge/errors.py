"""Exception hierarchy shared by every module.

Everything raised on bad input derives from :class:`JointForgeError`, which the
CLI maps to exit code 1. Anything else escaping a subcommand is treated as an
internal error (exit code 2).
"""


class JointForgeError(Exception):
    """Base class for validation errors."""


class MalformedDocument(JointForgeError):
    pass


class SchemaViolation(JointForgeError):
    pass


class InvalidGeometry(JointForgeError):
    pass


class UnsupportedEntity(JointForgeError):
    pass


class EmptyGraph(JointForgeError):
    pass


class EmptyDataset(JointForgeError):
    pass


class EmptySet(JointForgeError):
    pass


class ShapeMismatch(JointForgeError):
    pass


class NonScalarLoss(JointForgeError):
    pass


class ConsumedTape(JointForgeError):
    pass


class NoPositiveLabels(JointForgeError):
    pass


class MalformedFace(JointForgeError):
    pass


class IndexOutOfRange(JointForgeError):
    pass


class DegenerateMesh(JointForgeError):
    pass


class DegenerateDirection(JointForgeError):
    pass


class NoValidPrediction(JointForgeError):
    pass


class MissingPhysicalProps(JointForgeError):
    pass


class InvalidConfig(JointForgeError):
    pass


class CheckpointError(JointForgeError):
    pass
