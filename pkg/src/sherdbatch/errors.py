"""Exception types raised by the sherdbatch pipeline stages."""


class SherdbatchError(Exception):
    """Base class for all pipeline errors."""


class DegenerateCloud(SherdbatchError):
    """Point cloud is too small or rank-deficient for plane fitting."""


class EmptyCloud(SherdbatchError):
    """An operation received a cloud with no points."""


class PlyError(SherdbatchError):
    """Malformed or unsupported PLY content."""


class AlphaTooSmall(SherdbatchError):
    """Alpha shape fragmented: largest component covers < 50% of the points."""


class AlphaDegenerate(SherdbatchError):
    """Alpha complex has no usable closed outer boundary."""


class LengthMismatch(SherdbatchError):
    """Descriptors of different sample counts cannot be compared."""


class SizeMismatch(SherdbatchError):
    """Front and back batches differ in size."""


class DegenerateCorrespondence(SherdbatchError):
    """Paired points are collinear; the rigid fit is underdetermined."""


class NoViews(SherdbatchError):
    """Mask-based candidate filtering requires at least one camera view."""


class TooFewNeighbors(SherdbatchError):
    """Cloud has fewer points than the requested neighborhood size."""


class InsufficientCorrespondences(SherdbatchError):
    """Too few point pairs survived rejection to solve a rigid update."""


class NonFiniteObjective(SherdbatchError):
    """Registration objective became NaN or infinite."""


class InvalidSpec(SherdbatchError):
    """Synthetic fragment parameters violate their invariants."""


class DistinctnessFailure(SherdbatchError):
    """Could not generate mutually distinct outlines within the retry budget."""
