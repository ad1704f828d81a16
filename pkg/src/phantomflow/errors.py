"""Exception hierarchy shared by every stage of the workflow."""


class PhantomFlowError(Exception):
    """Base class for all library errors."""


class ManifestError(PhantomFlowError):
    """A scan manifest violates its invariants."""


class GeometryInvalid(PhantomFlowError):
    pass


# ingest / io
class NoScanDetected(PhantomFlowError):
    pass


class InsufficientFrames(PhantomFlowError):
    pass


class RoiOutOfBounds(PhantomFlowError):
    pass


class MalformedManifest(PhantomFlowError):
    pass


class SliceCountMismatch(PhantomFlowError):
    pass


class CorruptImage(PhantomFlowError):
    pass


# segmentation
class SegmentationError(PhantomFlowError):
    """Base for failures that mark a single slice as failed."""


class TooFewPoints(SegmentationError):
    pass


class NonFiniteEnergy(SegmentationError):
    pass


class InvalidContour(SegmentationError):
    pass


class BadRadius(SegmentationError):
    pass


class DegenerateInit(SegmentationError):
    pass


class NoContrast(SegmentationError):
    pass


class SeedOutOfBounds(SegmentationError):
    pass


class ContainmentViolation(SegmentationError):
    pass


class ContourCollapsed(SegmentationError):
    """The outer contour shrank to nothing; no organ was found."""


class FatalSegmentation(PhantomFlowError):
    pass


# evaluation / metrics
class DimensionMismatch(PhantomFlowError):
    pass


class EmptyStack(PhantomFlowError):
    pass


class DegenerateContour(PhantomFlowError):
    pass


# reconstruction
class EmptyGrid(PhantomFlowError):
    pass


class EmptyMesh(PhantomFlowError):
    pass


class InconsistentWinding(PhantomFlowError):
    pass


class IoFailure(PhantomFlowError):
    pass


# augmentation
class EmptyResection(PhantomFlowError):
    pass


class ConstraintCollapse(PhantomFlowError):
    pass


class NoVariants(PhantomFlowError):
    pass


# cli
class ConfigInvalid(PhantomFlowError):
    pass
