"""Exception taxonomy shared by the library, CLI and service layers."""


class VoxelightError(Exception):
    """Base class for all library errors."""


class ConfigError(VoxelightError):
    """Invalid configuration value or unsupported argument combination."""


class DataFormatError(VoxelightError):
    """Malformed dataset, asset or request payload."""


class CheckpointError(VoxelightError):
    """Checkpoint file is missing, truncated or inconsistent."""


class NotReadyError(VoxelightError):
    """An operation needs model state that has not been loaded yet."""


class TrainingError(VoxelightError):
    """Optimization aborted: divergence or a non-finite loss component."""


class TooLargeError(VoxelightError):
    """Requested output exceeds the configured size budget."""


class BusyError(VoxelightError):
    """Server-side queue is full; the caller should retry later."""
