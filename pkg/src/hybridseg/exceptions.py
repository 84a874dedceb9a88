"""Exception types shared across the package.

The CLI maps these onto exit codes: validation/usage problems exit 1,
anything unexpected exits 2.
"""


class HybridSegError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(HybridSegError, ValueError):
    """A tensor has an incompatible shape; the message names the offending axis."""


class ParameterError(HybridSegError, ValueError):
    """An argument value is outside its documented range."""


class UsageError(HybridSegError, ValueError):
    """The caller asked for something unsatisfiable (empty input, bad fraction, ...)."""


class IngestionError(HybridSegError, RuntimeError):
    """A dataset file is missing, unreadable, or inconsistent."""


class CheckpointError(HybridSegError, RuntimeError):
    """A checkpoint file cannot be read back."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version differs from what this code writes."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint payload does not match its recorded checksum."""


class TrainingDivergedError(HybridSegError, RuntimeError):
    """The training loss became non-finite."""
