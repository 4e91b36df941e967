"""Exception hierarchy shared by every module of the package."""


class PoseTransferError(Exception):
    """Base class; the CLI turns these into a diagnostic and a nonzero exit."""


class ManifestError(PoseTransferError):
    pass


class ImageDecodeError(PoseTransferError):
    pass


class KeypointError(PoseTransferError):
    pass


class ShapeError(PoseTransferError, ValueError):
    pass


class LevelError(PoseTransferError, ValueError):
    pass


class CheckpointError(PoseTransferError):
    pass


class ConfigError(PoseTransferError):
    pass


class TrainingDiverged(PoseTransferError):
    """Raised when a loss becomes non-finite; a snapshot is written first."""
