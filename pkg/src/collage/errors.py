"""Exception hierarchy for the collage engine.

Every error raised on purpose by this package derives from CollageError so the
CLI can map failures to exit codes without enumerating modules.
"""


class CollageError(Exception):
    """Base class for all engine errors."""


class ParseError(CollageError):
    """Malformed input file (SVG path data, TOML config, PNG header)."""


class ValidationError(CollageError):
    """Structurally valid input with illegal values (bad mode, missing file)."""


class DegenerateShape(CollageError):
    """Shape with (near) zero area, too few segments, or a self-intersecting
    outline at the default flattening tolerance."""


class ResolutionMismatch(CollageError):
    """Buffers or fields rendered at different resolutions were combined."""


class KernelTooLarge(CollageError):
    """A uniformity kernel exceeds the current raster resolution."""


class EmptyContainer(CollageError):
    """Container with no interior pixels at the working resolution."""


class PlacementOverflow(CollageError):
    """Initializer ran out of room and no fallback region exists."""


class NonFiniteGradient(CollageError):
    """NaN or Inf appeared in the loss or gradients; the run is aborted."""


class NonConvergence(CollageError):
    """Outline fitting failed to reach the target error."""


class CheckpointError(CollageError):
    """Checkpoint file missing, corrupt, or incompatible with the job."""
