"""Exception types raised across the package."""


class EmptyAnchorError(ValueError):
    """An anchor set or candidate list has no entries."""


class InsufficientDataError(ValueError):
    """Not enough valid ground-truth pixels to satisfy a request."""


class PairingError(ValueError):
    """Anchor lists that should be paired by index have different lengths."""


class ConfigurationError(ValueError):
    """Inconsistent hyperparameters or layer widths."""


class ShapeError(ValueError):
    """Tensor or image shapes violate an operation's contract."""


class ResolutionError(ValueError):
    """A feature map is too small for the requested matching window."""


class EmptyInputError(ValueError):
    """A metric was asked to aggregate nothing."""


class ArtifactNotFoundError(FileNotFoundError):
    """A checkpoint or other required artifact is missing."""


class CheckpointError(ValueError):
    """Base class for checkpoint decoding failures."""


class MagicMismatchError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass
