"""Procedural analytic scenes: a box room with axis-aligned box obstacles.

Depth rendering and visibility are closed-form (slab ray-box intersection),
exact to double precision, which makes these scenes the independent oracle
for the depth-based visibility test and for projection round trips.  Only
axis-aligned geometry is supported on purpose: it keeps every answer
analytic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CameraOutsideRoom
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    _frozen,
    back_project_batch,
    look_at,
    project_batch,
    MIN_CAMERA_Z,
)
from .selection import FLOOR_GUARD_PX, Frame, SampleSet

# Occlusion slack for the analytic segment test, so a point lying exactly on
# a surface does not occlude itself.
_SEGMENT_SLACK = 1e-6


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with strictly positive extent on every axis."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(3)
        hi = np.array(self.hi, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if not np.all(hi > lo):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def contains(self, point: np.ndarray, margin: float = 0.0) -> bool:
        """Strict interior test, shrunk by ``margin`` on every side."""
        p = np.asarray(point, dtype=float)
        return bool(np.all(p > self.lo + margin) and np.all(p < self.hi - margin))

    def encloses(self, other: "Box") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def overlaps(self, other: "Box", gap: float = 0.0) -> bool:
        return bool(
            np.all(self.lo - gap < other.hi) and np.all(other.lo - gap < self.hi)
        )

    def surface_distance(self, point: np.ndarray) -> float:
        """Unsigned distance from ``point`` to the box surface."""
        q = np.abs(np.asarray(point, dtype=float) - self.center) - self.half
        outside = float(np.linalg.norm(np.maximum(q, 0.0)))
        inside = float(min(np.max(q), 0.0))
        return abs(outside + inside)


@dataclass(frozen=True)
class Scene:
    """Room interior plus solid obstacles; obstacle id = list position."""

    room: Box
    obstacles: tuple[Box, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        for i, ob in enumerate(self.obstacles):
            if not self.room.encloses(ob) or not self.room.contains(ob.center):
                raise ValueError(f"obstacle {i} is not strictly inside the room")

    def camera_position_ok(self, point: np.ndarray, margin: float = 0.0) -> bool:
        """True when a camera center sits in the room interior, outside obstacles."""
        if not self.room.contains(point, margin):
            return False
        return not any(ob.contains(point, -margin) for ob in self.obstacles)

    def surface_distance(self, point: np.ndarray) -> float:
        """Distance to the nearest room wall or obstacle face."""
        dists = [self.room.surface_distance(point)]
        dists += [ob.surface_distance(point) for ob in self.obstacles]
        return min(dists)

    def to_json_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "room": {"lo": self.room.lo.tolist(), "hi": self.room.hi.tolist()},
            "obstacles": [
                {"id": i, "lo": ob.lo.tolist(), "hi": ob.hi.tolist()}
                for i, ob in enumerate(self.obstacles)
            ],
        }

    @staticmethod
    def from_json_dict(data: dict) -> "Scene":
        room = Box(lo=data["room"]["lo"], hi=data["room"]["hi"])
        obstacles = tuple(
            Box(lo=ob["lo"], hi=ob["hi"]) for ob in data["obstacles"]
        )
        return Scene(room=room, obstacles=obstacles, seed=int(data["seed"]))


@dataclass(frozen=True)
class Trajectory:
    """Ordered (frame id, camera-to-world pose) pairs, all inside the scene."""

    frames: tuple[tuple[int, CameraPose], ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)


def make_scene(seed: int, n_obstacles: int) -> Scene:
    """Deterministic scene: obstacles rejection-sampled to stay disjoint.

    Obstacle centers are confined to the central 45% of the floor plan so
    orbit trajectories (at 75% of the half-extent) never collide with them.
    """
    rng = np.random.default_rng(seed)
    half_x = rng.uniform(2.5, 4.0)
    half_y = rng.uniform(2.5, 4.0)
    height = rng.uniform(2.6, 3.2)
    room = Box(lo=np.array([-half_x, -half_y, 0.0]), hi=np.array([half_x, half_y, height]))

    obstacles: list[Box] = []
    attempts = 0
    while len(obstacles) < n_obstacles:
        attempts += 1
        if attempts > 200 * max(n_obstacles, 1):
            raise RuntimeError("could not place disjoint obstacles; room too small")
        cx = rng.uniform(-0.45 * half_x, 0.45 * half_x)
        cy = rng.uniform(-0.45 * half_y, 0.45 * half_y)
        sx = rng.uniform(0.1, 0.35)
        sy = rng.uniform(0.1, 0.35)
        top = rng.uniform(0.5, 1.6)
        cand = Box(lo=np.array([cx - sx, cy - sy, 0.0]), hi=np.array([cx + sx, cy + sy, top]))
        if any(cand.overlaps(ob, gap=0.05) for ob in obstacles):
            continue
        obstacles.append(cand)
    return Scene(room=room, obstacles=tuple(obstacles), seed=seed)


def _ray_hits(scene: Scene, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """First-hit parameter t (same scale as ``dirs``) from inside the room.

    Hits are the room walls from the inside and obstacle boxes from the
    outside; rays that start inside the room always hit something.
    """
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    origin = np.asarray(origin, dtype=float)
    # avoid 0/0 NaNs in the slab method; sign-preserving tiny denominator
    safe = np.where(dirs == 0.0, 1e-300, dirs)

    t_lo = (scene.room.lo - origin) / safe
    t_hi = (scene.room.hi - origin) / safe
    t_exit = np.min(np.maximum(t_lo, t_hi), axis=1)

    best = t_exit
    for ob in scene.obstacles:
        t1 = (ob.lo - origin) / safe
        t2 = (ob.hi - origin) / safe
        t_near = np.max(np.minimum(t1, t2), axis=1)
        t_far = np.min(np.maximum(t1, t2), axis=1)
        hit = (t_near <= t_far) & (t_near > 0.0)
        best = np.where(hit & (t_near < best), t_near, best)
    return best


def render_depth(
    scene: Scene,
    pose: CameraPose,
    intrinsics: CameraIntrinsics,
    width: int,
    height: int,
) -> DepthMap:
    """Exact per-pixel depth (camera-frame z of the nearest hit), in meters."""
    o = pose.center
    if not scene.camera_position_ok(o):
        raise CameraOutsideRoom(f"camera center {o.tolist()} not in the room interior")
    k = intrinsics.scaled(width, height)
    x = (np.arange(width) + 0.5 - k.cx) / k.fx
    y = (np.arange(height) + 0.5 - k.cy) / k.fy
    xs, ys = np.meshgrid(x, y)
    # camera-frame direction with z = 1 so the hit parameter IS the depth
    cam_dirs = np.stack([xs, ys, np.ones_like(xs)], axis=-1).reshape(-1, 3)
    world_dirs = cam_dirs @ pose.rotation.T
    t = _ray_hits(scene, o, world_dirs)
    return DepthMap(values=t.reshape(height, width))


def oracle_visibility(
    scene: Scene, samples: SampleSet, target: Frame, context: Frame
) -> SampleSet:
    """Analytic ray-cast visibility, independent of any rendered context depth.

    A sample's back-projected point X is visible from the context camera iff
    X projects in bounds with positive camera depth and the segment from the
    context center to X meets no nearer surface (1e-6 slack so X's own
    surface does not count as an occluder).
    """
    px = samples.pixels
    if len(px) == 0:
        return SampleSet(pixels=px)
    depths = target.depth.values[px[:, 1], px[:, 0]]
    points = back_project_batch(px[:, 0], px[:, 1], depths, target.pose, target.intrinsics)

    u, v, z = project_batch(points, context.pose, context.intrinsics)
    in_front = z > MIN_CAMERA_Z
    iu = np.floor(np.where(in_front, u, -1.0) + FLOOR_GUARD_PX).astype(int)
    iv = np.floor(np.where(in_front, v, -1.0) + FLOOR_GUARD_PX).astype(int)
    in_bounds = (
        (iu >= 0) & (iu < context.intrinsics.width)
        & (iv >= 0) & (iv < context.intrinsics.height)
    )

    o_c = context.pose.center
    seg = points - o_c
    dist = np.linalg.norm(seg, axis=1)
    t_hit = _ray_hits(scene, o_c, seg)  # t in units of the full segment length
    unoccluded = t_hit >= 1.0 - _SEGMENT_SLACK / np.maximum(dist, 1e-12)

    keep = in_front & in_bounds & unoccluded
    return SampleSet(pixels=px[keep])


def sample_trajectory(
    scene: Scene, n: int, seed: int, pattern: str = "orbit"
) -> Trajectory:
    """Deterministic camera trajectory with ids 0..n-1.

    ``orbit`` circles the room center at mid-height looking inward;
    ``random-walk`` wanders with collision rejection against walls and
    obstacles.
    """
    if pattern not in ("orbit", "random-walk"):
        raise ValueError(f"unknown trajectory pattern: {pattern!r}")
    rng = np.random.default_rng(seed)
    center = scene.room.center
    frames: list[tuple[int, CameraPose]] = []

    if pattern == "orbit":
        radius = 0.75 * float(min(scene.room.half[0], scene.room.half[1]))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        for i in range(n):
            theta = phase + 2.0 * np.pi * i / max(n, 1)
            eye = center + np.array(
                [radius * np.cos(theta), radius * np.sin(theta), 0.0]
            )
            frames.append((i, look_at(eye, center)))
        return Trajectory(frames=tuple(frames))

    # random-walk: bounded steps, rejection against walls and obstacles
    margin = 0.25
    pos = center.copy()
    yaw = rng.uniform(0.0, 2.0 * np.pi)
    for i in range(n):
        for _ in range(64):
            step = rng.normal(0.0, 0.35, size=3) * np.array([1.0, 1.0, 0.15])
            cand = pos + step
            if scene.camera_position_ok(cand, margin):
                pos = cand
                break
        yaw += rng.normal(0.0, 0.6)
        gaze = pos + np.array([np.cos(yaw), np.sin(yaw), rng.normal(0.0, 0.1)])
        frames.append((i, look_at(pos, gaze)))
    return Trajectory(frames=tuple(frames))
