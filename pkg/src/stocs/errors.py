"""Exception types raised across the package."""


class StocsError(Exception):
    """Base class for all package-specific errors."""


class EmptyCloud(StocsError):
    """An operation received a point cloud with no points."""


class TooFewPoints(StocsError):
    """Not enough points for the requested neighborhood computation."""


class DegenerateConfiguration(StocsError):
    """Correspondence set is rank-deficient (collinear or coincident)."""


class CoincidentPoints(StocsError):
    """A point pair with zero baseline cannot form a pair feature."""


class FormatError(StocsError):
    """A binary container is malformed, truncated, or has the wrong version."""


class ClassSetMismatch(StocsError):
    """Heatmaps being combined do not declare the same class set."""


class UnknownClass(StocsError):
    """A class id is not present in the heatmap."""


class AllPixelsInvalid(StocsError):
    """A depth image contains no valid (non-zero) pixels on the sample grid."""


class InsufficientSupport(StocsError):
    """Fewer than four scene points carry positive probability, or the base
    spread constraint cannot be satisfied."""


class NoHypothesisFound(StocsError):
    """Every trial produced an empty congruent set; no pose to return."""


class InsufficientOverlap(StocsError):
    """Initial pose places too few model points near the scene for ICP."""


class KTooLarge(StocsError):
    """Pooling region count exceeds the number of grid cells."""


class DimensionMismatch(StocsError):
    """Array shapes are inconsistent with the batch description."""


class NotVisible(StocsError):
    """The ground-truth pose renders to zero visible pixels."""


class ObjectOutOfFrustum(StocsError):
    """No sampled pose kept the object inside the camera frustum."""
