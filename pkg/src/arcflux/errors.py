"""Exception taxonomy shared across the package.

The command-line layer maps these onto distinct exit codes, so raising the
right family matters: configuration problems, malformed or corrupted data
files, and numerical failures during training are separately reportable.
"""

__all__ = [
    "ArcfluxError",
    "ConfigError",
    "DataFormatError",
    "ChecksumMismatchError",
    "VersionMismatchError",
    "TruncatedBlobError",
    "CheckpointError",
    "NumericalError",
]


class ArcfluxError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(ArcfluxError):
    """Invalid or contradictory run configuration."""


class DataFormatError(ArcfluxError):
    """A persisted artifact could not be read back."""


class ChecksumMismatchError(DataFormatError):
    """Stored checksum disagrees with the blob contents."""


class VersionMismatchError(DataFormatError):
    """File was written by an incompatible format version."""


class TruncatedBlobError(DataFormatError):
    """File ends before its declared payload does."""


class CheckpointError(DataFormatError):
    """Model checkpoint is malformed or corrupted."""


class NumericalError(ArcfluxError):
    """Training produced a non-finite quantity."""
