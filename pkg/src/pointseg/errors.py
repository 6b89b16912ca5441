"""Exception types raised across the engine."""


class PointsegError(Exception):
    """Base class for all engine errors."""


class MalformedRle(PointsegError):
    """RLE counts do not describe a bitmap of the declared dimensions."""


class EmptyMask(PointsegError):
    """Operation requires a mask with at least one set pixel."""


class ManifestParseError(PointsegError):
    """Proposal manifest is missing, unreadable, or structurally invalid."""


class DimsMismatch(PointsegError):
    """Two grids that must share dimensions do not."""


class InconsistentMetadata(PointsegError):
    """Declared mask metadata disagrees with the decoded mask."""


class EmptyPointSet(PointsegError):
    """Operation requires at least one point label."""


class BudgetExhausted(PointsegError):
    """All budgeted points have already been selected."""


class ImageExhausted(PointsegError):
    """More distinct pixels requested than the image contains."""


class EmptyOverlap(PointsegError):
    """Internal consistency check: overlap region of a signature is empty."""


class IncompleteFill(PointsegError):
    """Fill map passed to composition still contains unlabeled pixels."""


class EmptyMatrix(PointsegError):
    """Metrics requested from a confusion matrix with zero evaluated pixels."""


class PredContainsSentinel(PointsegError):
    """Prediction map contains unlabeled pixels and cannot be scored."""


class DatasetInvalid(PointsegError):
    """Dataset directory fails validation."""
