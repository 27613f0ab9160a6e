"""Exception types shared across the toolkit."""


class FrappeKitError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(FrappeKitError, ValueError):
    """Invalid argument values (non-finite inputs, out-of-range parameters)."""


class ShapeError(ValidationError):
    """Array dimensions do not match the expected contract."""


class FormatError(FrappeKitError, ValueError):
    """Malformed binary container or manifest.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class RegistrationError(FrappeKitError):
    """Rigid registration failed (too few or degenerate correspondences)."""


class AlignmentError(FrappeKitError):
    """Procrustes alignment failed (degenerate point configuration)."""


class OnsetNotFoundError(FrappeKitError, LookupError):
    """A force series never crossed the onset threshold."""


class ConfigError(FrappeKitError, ValueError):
    """Invalid training/evaluation configuration."""


class TrainingAborted(FrappeKitError, RuntimeError):
    """Training stopped early (non-finite loss). Carries the last-good checkpoint."""

    def __init__(self, message: str, checkpoint_dir=None, step: int | None = None):
        super().__init__(message)
        self.checkpoint_dir = checkpoint_dir
        self.step = step


class InternalError(FrappeKitError, RuntimeError):
    """Invariant violated inside the toolkit; indicates a bug, not bad input."""
