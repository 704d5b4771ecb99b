"""Bit-exact file formats and scene-directory ingestion.

Formats:

* Pose text files: 4 lines x 4 whitespace-separated floats, camera-to-world,
  printed with 17 significant digits so write -> read round trips exactly.
* ``intrinsics.txt``: ``key=value`` lines for fx, fy, cx, cy, width, height.
* Depth ``.ccd``: magic ``CCD1``, u32 width, u32 height (little endian),
  then row-major little-endian float32 meters; 0.0 marks invalid.  16-bit
  grayscale PNGs (millimeters, ScanNet convention) can be ingested through
  the optional Pillow adapter.
* Tensor ``.cct``: magic ``CCT1``, u32 rank, u32 dims[rank], then row-major
  little-endian float64 payload.
* Manifests: one JSON object per line with keys ``scene``, ``target``,
  ``contexts`` (exactly 4 ids), ``coverage``, ``target_pose`` (16 floats,
  row-major camera-to-world).

A scene directory holds ``intrinsics.txt``, ``pose/<id>.txt`` and
``depth/<id>.ccd`` with matching frame-id sets, plus an optional
``scene.json``.  Readers never raise anything but :class:`MalformedFile`
subclasses on bad input.
"""

from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    MalformedDepth,
    MalformedIntrinsics,
    MalformedLine,
    MalformedPose,
    MalformedScene,
    MalformedTensor,
    MissingKey,
    NonPositiveFocal,
    TruncatedPayload,
)
from .geometry import CameraIntrinsics, CameraPose, DepthMap, orthonormalize, recompose
from .selection import Frame, ViewGroup

DEPTH_MAGIC = b"CCD1"
TENSOR_MAGIC = b"CCT1"
POSE_DIR = "pose"
DEPTH_DIR = "depth"
INTRINSICS_FILE = "intrinsics.txt"
SCENE_FILE = "scene.json"
MANIFEST_CONTEXTS = 4

_INTRINSICS_KEYS = ("fx", "fy", "cx", "cy", "width", "height")
_MAX_TENSOR_RANK = 16


class PoseOrthonormalityWarning(UserWarning):
    """Pose file rotation deviated from orthonormal and was re-projected."""


# --- pose text files ---------------------------------------------------------


def write_pose_file(path: str | Path, pose: CameraPose) -> None:
    lines = [" ".join(f"{v:.17g}" for v in row) for row in pose.m]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_file(path: str | Path) -> CameraPose:
    """Parse a 4x4 camera-to-world pose; small non-rigidity is repaired.

    Rotation blocks off orthonormal by more than 1e-4 (or a bent last row)
    raise :class:`MalformedPose`; deviations beyond 1e-9 are silently
    projected back onto SO(3) with a :class:`PoseOrthonormalityWarning`.
    """
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as exc:
        raise MalformedPose(f"{path}: not a text file: {exc}") from exc
    tokens = text.split()
    if len(tokens) != 16:
        raise MalformedPose(f"{path}: expected 16 floats, got {len(tokens)} tokens")
    try:
        values = np.array([float(t) for t in tokens]).reshape(4, 4)
    except ValueError as exc:
        raise MalformedPose(f"{path}: unparseable float: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise MalformedPose(f"{path}: non-finite entries")
    if np.max(np.abs(values[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-4:
        raise MalformedPose(f"{path}: last row must be (0, 0, 0, 1)")
    r = values[:3, :3]
    residual = max(
        float(np.max(np.abs(r.T @ r - np.eye(3)))),
        abs(float(np.linalg.det(r)) - 1.0),
    )
    if residual > 1e-4:
        raise MalformedPose(f"{path}: rotation non-rigid (residual {residual:.3g})")
    if residual > 1e-9:
        warnings.warn(
            f"{path}: rotation residual {residual:.3g}, re-orthonormalized",
            PoseOrthonormalityWarning,
        )
        r = orthonormalize(r)
    return CameraPose(recompose(r, values[:3, 3]))


# --- intrinsics --------------------------------------------------------------


def write_intrinsics(path: str | Path, intrinsics: CameraIntrinsics) -> None:
    lines = [
        f"fx={intrinsics.fx:.17g}",
        f"fy={intrinsics.fy:.17g}",
        f"cx={intrinsics.cx:.17g}",
        f"cy={intrinsics.cy:.17g}",
        f"width={intrinsics.width}",
        f"height={intrinsics.height}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_intrinsics(path: str | Path) -> CameraIntrinsics:
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as exc:
        raise MalformedIntrinsics(f"{path}: not a text file: {exc}") from exc
    found: dict[str, float] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _INTRINSICS_KEYS:
            raise MalformedIntrinsics(f"{path}: unrecognized line {raw!r}")
        try:
            found[key] = float(value)
        except ValueError as exc:
            raise MalformedIntrinsics(f"{path}: bad value for {key}: {exc}") from exc
    for key in _INTRINSICS_KEYS:
        if key not in found:
            raise MissingKey(f"{path}: missing required key {key!r}")
    if found["fx"] <= 0.0 or found["fy"] <= 0.0:
        raise NonPositiveFocal(f"{path}: focal lengths must be positive")
    try:
        return CameraIntrinsics(
            fx=found["fx"], fy=found["fy"], cx=found["cx"], cy=found["cy"],
            width=int(found["width"]), height=int(found["height"]),
        )
    except ValueError as exc:
        raise MalformedIntrinsics(f"{path}: {exc}") from exc


# --- depth maps --------------------------------------------------------------


def write_depth(path: str | Path, depth: DepthMap) -> None:
    header = DEPTH_MAGIC + struct.pack("<II", depth.width, depth.height)
    payload = depth.values.astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_depth(path: str | Path) -> DepthMap:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedPayload(f"{path}: file shorter than the magic")
    if data[:4] != DEPTH_MAGIC:
        raise BadMagic(f"{path}: expected magic {DEPTH_MAGIC!r}, got {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedPayload(f"{path}: header truncated")
    width, height = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * width * height
    if len(data) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(data) - 12} bytes, "
            f"expected {expected - 12} for {width}x{height}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width)
    try:
        return DepthMap(values=values.astype(float))
    except ValueError as exc:
        raise MalformedDepth(f"{path}: {exc}") from exc


def read_depth_png(path: str | Path) -> DepthMap:
    """Ingest a 16-bit grayscale PNG storing millimeters (ScanNet convention)."""
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise MalformedDepth(
            "PNG depth ingest needs Pillow (install the 'png' extra)"
        ) from exc
    try:
        with Image.open(path) as img:
            arr = np.asarray(img)
    except Exception as exc:
        raise MalformedDepth(f"{path}: unreadable PNG: {exc}") from exc
    if arr.ndim != 2:
        raise MalformedDepth(f"{path}: expected single-channel depth PNG")
    return DepthMap(values=arr.astype(float) / 1000.0)


# --- binary tensors ----------------------------------------------------------


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(array, dtype=float))
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype("<f8").tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedPayload(f"{path}: file shorter than the magic")
    if data[:4] != TENSOR_MAGIC:
        raise BadMagic(f"{path}: expected magic {TENSOR_MAGIC!r}, got {data[:4]!r}")
    if len(data) < 8:
        raise TruncatedPayload(f"{path}: header truncated")
    (rank,) = struct.unpack("<I", data[4:8])
    if rank > _MAX_TENSOR_RANK:
        raise MalformedTensor(f"{path}: implausible rank {rank}")
    if len(data) < 8 + 4 * rank:
        raise TruncatedPayload(f"{path}: dims truncated")
    dims = struct.unpack(f"<{rank}I", data[8 : 8 + 4 * rank])
    count = 1
    for d in dims:
        count *= d
    expected = 8 + 4 * rank + 8 * count
    if len(data) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(data) - 8 - 4 * rank} bytes, "
            f"expected {8 * count} for dims {dims}"
        )
    values = np.frombuffer(data, dtype="<f8", offset=8 + 4 * rank)
    if not np.all(np.isfinite(values)):
        raise MalformedTensor(f"{path}: non-finite payload")
    return values.reshape(dims).copy()


# --- manifests ---------------------------------------------------------------


def write_manifest(path: str | Path, groups: Sequence[ViewGroup]) -> None:
    lines = []
    for g in groups:
        if len(g.context_ids) != MANIFEST_CONTEXTS:
            raise ValueError(
                f"manifest lines carry exactly {MANIFEST_CONTEXTS} contexts, "
                f"group for target {g.target_id} has {len(g.context_ids)}"
            )
        lines.append(json.dumps({
            "scene": g.scene,
            "target": g.target_id,
            "contexts": list(g.context_ids),
            "coverage": g.coverage,
            "target_pose": [float(v) for v in g.target_pose.m.ravel()],
        }))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path: str | Path) -> list[ViewGroup]:
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as exc:
        raise MalformedLine(0, f"{path}: not a text file: {exc}") from exc
    groups: list[ViewGroup] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedLine(lineno, f"invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedLine(lineno, "expected a JSON object")
        missing = {"scene", "target", "contexts", "coverage", "target_pose"} - set(obj)
        if missing:
            raise MalformedLine(lineno, f"missing keys {sorted(missing)}")
        contexts = obj["contexts"]
        if (
            not isinstance(contexts, list)
            or len(contexts) != MANIFEST_CONTEXTS
            or not all(isinstance(c, int) for c in contexts)
        ):
            raise MalformedLine(
                lineno, f"contexts must be a list of {MANIFEST_CONTEXTS} integer ids"
            )
        flat = obj["target_pose"]
        if not isinstance(flat, list) or len(flat) != 16:
            raise MalformedLine(lineno, "target_pose must hold 16 floats")
        try:
            pose = CameraPose(np.array(flat, dtype=float).reshape(4, 4))
            group = ViewGroup(
                target_id=int(obj["target"]),
                context_ids=tuple(contexts),
                coverage=float(obj["coverage"]),
                target_pose=pose,
                scene=str(obj["scene"]),
            )
        except (ValueError, TypeError) as exc:
            raise MalformedLine(lineno, str(exc)) from exc
        groups.append(group)
    return groups


# --- scene directories ---------------------------------------------------------


def _frame_ids(directory: Path, suffix: str) -> dict[int, Path]:
    ids: dict[int, Path] = {}
    for p in sorted(directory.glob(f"*{suffix}")):
        try:
            ids[int(p.stem)] = p
        except ValueError as exc:
            raise MalformedScene(f"{p}: frame file names must be integer ids") from exc
    return ids


def load_scene_dir(path: str | Path) -> list[Frame]:
    """Read intrinsics plus all (pose, depth) frame pairs, sorted by id."""
    root = Path(path)
    intr_path = root / INTRINSICS_FILE
    if not intr_path.is_file():
        raise MalformedScene(f"{root}: missing {INTRINSICS_FILE}")
    intrinsics = read_intrinsics(intr_path)
    pose_dir = root / POSE_DIR
    depth_dir = root / DEPTH_DIR
    if not pose_dir.is_dir() or not depth_dir.is_dir():
        raise MalformedScene(f"{root}: missing {POSE_DIR}/ or {DEPTH_DIR}/ directory")
    poses = _frame_ids(pose_dir, ".txt")
    depths = _frame_ids(depth_dir, ".ccd")
    if set(poses) != set(depths):
        only_pose = sorted(set(poses) - set(depths))
        only_depth = sorted(set(depths) - set(poses))
        raise MalformedScene(
            f"{root}: frame ids disagree between pose/ and depth/ "
            f"(pose-only {only_pose}, depth-only {only_depth})"
        )
    frames: list[Frame] = []
    for fid in sorted(poses):
        try:
            frame = Frame(
                id=fid,
                pose=read_pose_file(poses[fid]),
                intrinsics=intrinsics,
                depth=read_depth(depths[fid]),
            )
        except ValueError as exc:
            raise MalformedScene(f"{root}: frame {fid}: {exc}") from exc
        frames.append(frame)
    return frames
