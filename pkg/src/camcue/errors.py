"""Exception hierarchy for the camcue package.

Every error the library raises on purpose derives from :class:`CamcueError`,
so callers (and the CLI) can catch one type.  File-parsing errors share the
:class:`MalformedFile` base: readers never let a raw ``struct``/``json``/
decode exception escape.
"""


class CamcueError(Exception):
    """Base class for all camcue errors."""


# --- geometry ---------------------------------------------------------------


class NonPositiveDepth(CamcueError):
    """Back-projection was asked for a sample with depth <= 0."""


class BehindCamera(CamcueError):
    """Projected point lies at or behind the camera plane (z_cam <= 1e-6)."""


class NotARotation(CamcueError):
    """Matrix handed to a rotation-only operation is not orthonormal."""


class SingularMatrix(CamcueError):
    """Polar orthonormalization received a (numerically) singular matrix."""


# --- token / network shapes -------------------------------------------------


class ShapeMismatch(CamcueError):
    """Array arguments disagree with the configured or expected shape."""


class ConfigError(CamcueError):
    """Invalid or inconsistent configuration values."""


class DivergedLoss(CamcueError):
    """Training loss became non-finite; carries the offending step index."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


# --- view selection ----------------------------------------------------------


class EmptySamples(CamcueError):
    """Target frame has no valid-depth pixels to sample."""


class InsufficientCandidates(CamcueError):
    """Fewer candidate frames than the number of contexts to select."""


# --- pose evaluation ---------------------------------------------------------


class SingularRotation(CamcueError):
    """Predicted rotation block is singular and cannot be orthonormalized."""


class EmptySampleSet(CamcueError):
    """Accuracy report requested over zero error samples."""


# --- synthetic scenes --------------------------------------------------------


class CameraOutsideRoom(CamcueError):
    """Render requested from a camera center outside the room interior."""


# --- file formats ------------------------------------------------------------


class MalformedFile(CamcueError):
    """Base for every typed file-format error."""


class MalformedPose(MalformedFile):
    """Pose text file has the wrong token count, non-finite or non-rigid values."""


class MissingKey(MalformedFile):
    """Intrinsics file lacks a required key."""


class NonPositiveFocal(MalformedFile):
    """Intrinsics file declares fx or fy <= 0."""


class MalformedIntrinsics(MalformedFile):
    """Intrinsics file has unparseable or out-of-range values."""


class BadMagic(MalformedFile):
    """Binary file does not start with the expected magic bytes."""


class TruncatedPayload(MalformedFile):
    """Binary file length disagrees with its declared dimensions."""


class MalformedDepth(MalformedFile):
    """Depth payload decodes but violates depth-map invariants."""


class MalformedTensor(MalformedFile):
    """Tensor file has an invalid header or payload."""


class MalformedLine(MalformedFile):
    """Manifest line failed to parse; carries its 1-based line number."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class MalformedScene(MalformedFile):
    """Scene directory is inconsistent (missing files, mismatched frame ids)."""
