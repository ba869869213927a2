"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data/validation
errors exit 2, numerical failures exit 3.
"""


class VsgatError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(VsgatError):
    """Operands with incompatible extents."""


class DegenerateBoxError(VsgatError):
    """Bounding box with zero or negative width/height."""


class MissingEmbeddingError(VsgatError):
    """Class label absent from the embedding table."""


class SceneValidationError(VsgatError):
    """Scene fixture violates an invariant (bad score, unknown label, ...)."""


class SceneTooSmallError(VsgatError):
    """Fewer than two detections survive; no graph can be built."""


class CheckpointError(VsgatError):
    """Corrupt checkpoint file or manifest mismatch."""


class NumericalError(VsgatError):
    """Non-finite loss, failed gradient check, or similar numeric failure."""
