"""Pinhole camera and SE(3) pose primitives.

Conventions, shared by every module in this package:

* Poses are camera-to-world rigid transforms: ``X_world = R @ X_cam + t``.
  The translation column of the matrix is the camera center in world
  coordinates.  World-to-camera is always derived on the fly, never stored.
* The camera frame follows OpenCV: +x right, +y down, +z forward (the
  camera looks along +z in its own frame).  World +z is up.
* Integer pixel (u, v) names the square cell whose center is at
  ``(u + 0.5, v + 0.5)``.  Projection and back-projection both use cell
  centers, which makes them exact inverses of each other.
* All geometry is computed in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, NonPositiveDepth, NotARotation, SingularMatrix

# Camera-frame depth at or below this counts as behind the camera.
MIN_CAMERA_Z = 1e-6

_LAST_ROW = np.array([0.0, 0.0, 0.0, 1.0])


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics, in pixels, for an image of ``width x height``."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not (0.0 <= self.cx <= self.width and 0.0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics for the same field of view at a different resolution."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height
        )


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform with a validated rotation block.

    The last row must be exactly (0, 0, 0, 1) and the 3x3 block must be a
    proper rotation within 1e-9.  Use :class:`RawPose` for unconstrained
    (e.g. regressed) matrices.
    """

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"pose must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("pose has non-finite entries")
        if not np.array_equal(m[3], _LAST_ROW):
            raise ValueError("pose last row must be exactly (0, 0, 0, 1)")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise ValueError("rotation block is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation block determinant must be +1 within 1e-9")
        object.__setattr__(self, "m", _frozen(m))

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(4))

    @staticmethod
    def from_rt(rotation: np.ndarray, translation: np.ndarray) -> "CameraPose":
        return CameraPose(recompose(np.asarray(rotation), np.asarray(translation)))

    @property
    def rotation(self) -> np.ndarray:
        return self.m[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.m[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (same as the translation column)."""
        return self.m[:3, 3]


@dataclass(frozen=True)
class RawPose:
    """An arbitrary finite 4x4 matrix, e.g. a regressed pose before projection."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"raw pose must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("raw pose has non-finite entries")
        object.__setattr__(self, "m", _frozen(m))


@dataclass(frozen=True)
class PoseDecomposition:
    """Verbatim (1:3,1:3) rotation block and (1:3,4) translation column."""

    r: np.ndarray
    t: np.ndarray


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in meters, row-major (height, width); 0.0 marks invalid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("depth map has non-finite entries")
        if v.size and v.min() < 0.0:
            raise ValueError("depth values must be >= 0")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def decompose(pose: CameraPose | RawPose) -> PoseDecomposition:
    """Extract rotation block and translation column verbatim, no normalization."""
    m = pose.m
    return PoseDecomposition(r=m[:3, :3].copy(), t=m[:3, 3].copy())


def recompose(r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Assemble a 4x4 matrix with canonical last row from blocks, verbatim."""
    m = np.zeros((4, 4))
    m[:3, :3] = r
    m[:3, 3] = t
    m[3, 3] = 1.0
    return m


def back_project(
    u: float, v: float, depth: float, pose: CameraPose, intrinsics: CameraIntrinsics
) -> np.ndarray:
    """Lift pixel (u, v) at the given depth to a world point.

    Uses the pixel-center convention: the ray goes through (u + 0.5, v + 0.5).
    """
    if not depth > 0.0:
        raise NonPositiveDepth(f"depth must be > 0, got {depth}")
    x = depth * (u + 0.5 - intrinsics.cx) / intrinsics.fx
    y = depth * (v + 0.5 - intrinsics.cy) / intrinsics.fy
    cam = np.array([x, y, depth])
    return pose.rotation @ cam + pose.translation


def back_project_batch(
    us: np.ndarray,
    vs: np.ndarray,
    depths: np.ndarray,
    pose: CameraPose,
    intrinsics: CameraIntrinsics,
) -> np.ndarray:
    """Vectorized :func:`back_project`; caller guarantees depths > 0.

    Returns an (N, 3) array of world points.
    """
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    depths = np.asarray(depths, dtype=float)
    x = depths * (us + 0.5 - intrinsics.cx) / intrinsics.fx
    y = depths * (vs + 0.5 - intrinsics.cy) / intrinsics.fy
    cam = np.stack([x, y, depths], axis=-1)
    return cam @ pose.rotation.T + pose.translation


def project(
    point: np.ndarray, pose: CameraPose, intrinsics: CameraIntrinsics
) -> tuple[float, float, float]:
    """Project a world point; returns (u, v, z_cam) in the pixel-center convention.

    Raises :class:`BehindCamera` when z_cam <= 1e-6; batch callers that must
    not abort on rejected samples should use :func:`project_batch` and mask.
    """
    cam = pose.rotation.T @ (np.asarray(point, dtype=float) - pose.translation)
    z = cam[2]
    if z <= MIN_CAMERA_Z:
        raise BehindCamera(f"point has camera depth {z:.3g}")
    u = intrinsics.fx * cam[0] / z + intrinsics.cx - 0.5
    v = intrinsics.fy * cam[1] / z + intrinsics.cy - 0.5
    return float(u), float(v), float(z)


def project_batch(
    points: np.ndarray, pose: CameraPose, intrinsics: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection returning (u, v, z_cam) arrays without raising.

    Behind-camera points simply come back with z_cam <= 1e-6 (their u, v are
    meaningless); callers must mask on z before using pixel coordinates.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    cam = (pts - pose.translation) @ pose.rotation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx - 0.5
        v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy - 0.5
    return u, v, z


def _check_rotation(m: np.ndarray, tol: float) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise NotARotation(f"expected a finite 3x3 matrix, got shape {m.shape}")
    if np.max(np.abs(m.T @ m - np.eye(3))) > tol:
        raise NotARotation("matrix is not orthonormal within tolerance")
    if np.linalg.det(m) < 0.0:
        raise NotARotation("matrix is a reflection (det < 0)")
    return m


def rotation_geodesic_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees, in [0, 180].

    Both inputs must be orthonormal within 1e-6.
    """
    ra = _check_rotation(ra, 1e-6)
    rb = _check_rotation(rb, 1e-6)
    c = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def orthonormalize(m: np.ndarray) -> np.ndarray:
    """Nearest rotation to ``m`` in Frobenius norm (polar factor, det = +1).

    The sign of the smallest singular direction is flipped when needed to
    enforce det = +1.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise SingularMatrix(f"expected a finite 3x3 matrix, got shape {m.shape}")
    u, s, vt = np.linalg.svd(m)
    if s[0] <= 0.0 or s[2] <= 1e-12 * s[0]:
        raise SingularMatrix("matrix is singular to working precision")
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u = u.copy()
        u[:, 2] = -u[:, 2]  # smallest singular value is last in numpy's SVD
        r = u @ vt
    return r


def pose_inverse(pose: CameraPose) -> CameraPose:
    """SE(3) inverse via the (R^T, -R^T t) closed form."""
    r = pose.rotation
    return CameraPose(recompose(r.T, -(r.T @ pose.translation)))


def pose_compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """SE(3) composition a . b (apply b first, then a)."""
    m = a.m @ b.m
    m[3] = _LAST_ROW  # exact, matrix product only reproduces it up to fp noise
    return CameraPose(m)


def rotation_about_axis(axis: np.ndarray, degrees: float) -> np.ndarray:
    """Rodrigues rotation about an arbitrary (non-zero) axis."""
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise ValueError("axis must be non-zero")
    a = a / n
    th = np.radians(degrees)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(th) * k + (1.0 - np.cos(th)) * (k @ k)


def look_at(eye: np.ndarray, target: np.ndarray) -> CameraPose:
    """Camera-to-world pose at ``eye`` with +z toward ``target`` and +y down.

    World +z is up.  Falls back to a fixed right vector when the view
    direction is (anti)parallel to the vertical.
    """
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    n = np.linalg.norm(forward)
    if n == 0.0:
        raise ValueError("eye and target coincide")
    z = forward / n
    x = np.cross([0.0, 0.0, -1.0], z)  # right = world-down x forward
    xn = np.linalg.norm(x)
    if xn < 1e-12:
        x = np.array([1.0, 0.0, 0.0])
    else:
        x = x / xn
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=1)
    return CameraPose(recompose(r, eye))


def euler_angles_zyx(r: np.ndarray) -> tuple[float, float, float]:
    """(yaw, pitch, roll) in radians for R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    r = np.asarray(r, dtype=float)
    pitch = float(np.arcsin(np.clip(-r[2, 0], -1.0, 1.0)))
    yaw = float(np.arctan2(r[1, 0], r[0, 0]))
    roll = float(np.arctan2(r[2, 1], r[2, 2]))
    return yaw, pitch, roll
