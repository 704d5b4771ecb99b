"""Multi-view group selection with depth-based visibility.

Pipeline per candidate target frame: filter candidate contexts by pose,
sample the target's valid-depth pixels on a stride grid, greedily pick k
contexts maximizing marginal visible coverage, gate on total coverage, and
drop targets redundant with already-accepted ones.  Everything is
deterministic: ties break toward the smallest frame id and targets are
visited in ascending id order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySamples, InsufficientCandidates
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    MIN_CAMERA_Z,
    _frozen,
    back_project_batch,
    project_batch,
    rotation_geodesic_deg,
)

# Forward guard applied before flooring projected pixel coordinates: exact
# re-projections land within ~1e-13 px of the integer grid and would
# otherwise flip to the neighboring pixel on negative rounding noise.
FLOOR_GUARD_PX = 1e-9

# rejection-reason keys reported by select_groups
REASON_TOO_FEW = "too-few-candidates"
REASON_POSE_FILTER = "pose-filter"
REASON_NO_SAMPLES = "no-samples"
REASON_COVERAGE = "coverage"
REASON_REDUNDANCY = "redundancy"


@dataclass(frozen=True)
class SelectionConfig:
    """Thresholds for Algorithm-style group selection (distances in meters)."""

    d_min: float = 0.4
    d_max: float = 2.5
    distinct_d: float = 0.6
    distinct_theta_deg: float = 15.0
    k: int = 4
    gamma: float = 0.80
    tau_t: float = 0.5
    tau_theta_deg: float = 45.0
    epsilon: float = 0.05
    sample_stride: int = 8
    # "target": distinctness is measured against the target pose (default);
    # "pairwise": candidates are additionally deduplicated among themselves.
    distinctness: str = "target"

    def __post_init__(self):
        if not (0.0 < self.d_min < self.d_max):
            raise ValueError("need 0 < d_min < d_max")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be > 0")
        if self.sample_stride < 1:
            raise ValueError("sample stride must be >= 1")
        if self.distinctness not in ("target", "pairwise"):
            raise ValueError("distinctness must be 'target' or 'pairwise'")


@dataclass(frozen=True)
class Frame:
    """One posed RGB-D view: id, camera-to-world pose, intrinsics, depth."""

    id: int
    pose: CameraPose
    intrinsics: CameraIntrinsics
    depth: DepthMap

    def __post_init__(self):
        if (self.depth.width, self.depth.height) != (
            self.intrinsics.width,
            self.intrinsics.height,
        ):
            raise ValueError(
                f"frame {self.id}: depth {self.depth.width}x{self.depth.height} "
                f"does not match intrinsics "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )


@dataclass(frozen=True)
class SampleSet:
    """(N, 2) integer (u, v) pixels with valid target depth, row-major order."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=int).reshape(-1, 2)
        object.__setattr__(self, "pixels", _frozen(px))

    def __len__(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ViewGroup:
    """One curated sample: target, its k contexts, and the achieved coverage."""

    target_id: int
    context_ids: tuple[int, ...]
    coverage: float
    target_pose: CameraPose
    gains: tuple[int, ...] = ()
    scene: str = ""

    def __post_init__(self):
        ids = tuple(int(i) for i in self.context_ids)
        if len(set(ids)) != len(ids):
            raise ValueError("context ids must be distinct")
        if self.target_id in ids:
            raise ValueError("target id must not appear among contexts")
        if not (0.0 <= self.coverage <= 1.0):
            raise ValueError("coverage must be in [0, 1]")
        object.__setattr__(self, "context_ids", ids)
        object.__setattr__(self, "gains", tuple(int(g) for g in self.gains))


@dataclass
class SelectionOutcome:
    """Accepted groups plus a histogram of per-target rejection reasons."""

    groups: list[ViewGroup]
    rejections: dict[str, int] = field(default_factory=dict)

    @property
    def accepted(self) -> int:
        return len(self.groups)

    @property
    def rejected(self) -> int:
        return sum(self.rejections.values())


def _pose_gap(a: CameraPose, b: CameraPose) -> tuple[float, float]:
    """(translation distance in meters, geodesic rotation gap in degrees)."""
    d = float(np.linalg.norm(a.translation - b.translation))
    theta = rotation_geodesic_deg(a.rotation, b.rotation)
    return d, theta


def pose_filter(target: Frame, candidate: Frame, cfg: SelectionConfig) -> bool:
    """Moderate-baseline + distinctness gate between target and candidate.

    True iff d_min < ||t_t - t_c|| < d_max and the candidate is distinct
    from the target (distance above distinct_d, or rotation gap above
    distinct_theta).  In pairwise mode only the range part applies here;
    distinctness then runs among candidates in :func:`select_groups`.
    """
    d, theta = _pose_gap(target.pose, candidate.pose)
    if not (cfg.d_min < d < cfg.d_max):
        return False
    if cfg.distinctness == "pairwise":
        return True
    return d > cfg.distinct_d or theta > cfg.distinct_theta_deg


def _pairwise_distinct(frames: Sequence[Frame], cfg: SelectionConfig) -> list[Frame]:
    """Keep the lowest-id representative of every near-duplicate cluster."""
    kept: list[Frame] = []
    for f in frames:
        dup = False
        for g in kept:
            d, theta = _pose_gap(f.pose, g.pose)
            if d <= cfg.distinct_d and theta <= cfg.distinct_theta_deg:
                dup = True
                break
        if not dup:
            kept.append(f)
    return kept


def target_samples(target: Frame, stride: int) -> SampleSet:
    """Valid-depth pixels on a regular stride grid, row-major order."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    depth = target.depth.values
    vs, us = np.meshgrid(
        np.arange(0, target.depth.height, stride),
        np.arange(0, target.depth.width, stride),
        indexing="ij",
    )
    us = us.ravel()
    vs = vs.ravel()
    valid = depth[vs, us] > 0.0
    if not np.any(valid):
        raise EmptySamples(f"frame {target.id} has no valid depth at stride {stride}")
    return SampleSet(pixels=np.stack([us[valid], vs[valid]], axis=1))


def _visible_mask(
    samples: SampleSet, target: Frame, context: Frame, epsilon: float
) -> np.ndarray:
    """Boolean mask over samples: visible in the context view per the depth test.

    A sample passes when its back-projected point lands in front of the
    context camera, inside the image at the floored integer pixel, that
    pixel's depth is valid, and the point's depth is at most the stored
    context depth plus epsilon.
    """
    px = samples.pixels
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
    stored = np.zeros(len(samples))
    sel = in_front & in_bounds
    stored[sel] = context.depth.values[iv[sel], iu[sel]]
    return sel & (stored > 0.0) & (z <= stored + epsilon)


def visibility(
    samples: SampleSet, target: Frame, context: Frame, epsilon: float
) -> SampleSet:
    """Subset of samples visible in the context view (order preserved)."""
    mask = _visible_mask(samples, target, context, epsilon)
    return SampleSet(pixels=samples.pixels[mask])


def greedy_max_coverage(
    candidates: Sequence[tuple[int, frozenset]], k: int
) -> tuple[list[int], frozenset, list[int]]:
    """k rounds of greedy maximum coverage over abstract element sets.

    Each round picks the candidate with the largest marginal gain; ties and
    zero gains resolve to the smallest id.  Returns (chosen ids, covered
    union, per-round marginal gains).
    """
    if len(candidates) < k:
        raise InsufficientCandidates(f"need at least {k} candidates, got {len(candidates)}")
    sets_by_id = {int(cid): frozenset(elems) for cid, elems in candidates}
    if len(sets_by_id) != len(candidates):
        raise ValueError("candidate ids must be unique")
    covered: set = set()
    chosen: list[int] = []
    gains: list[int] = []
    remaining = sorted(sets_by_id)
    for _ in range(k):
        best_id = remaining[0]
        best_gain = -1
        for cid in remaining:
            gain = len(sets_by_id[cid] - covered)
            if gain > best_gain:
                best_gain = gain
                best_id = cid
        chosen.append(best_id)
        gains.append(best_gain)
        remaining.remove(best_id)
        covered |= sets_by_id[best_id]
    return chosen, frozenset(covered), gains


@dataclass(frozen=True)
class GreedyResult:
    chosen_ids: tuple[int, ...]
    covered: frozenset
    gains: tuple[int, ...]
    sample_count: int

    @property
    def coverage(self) -> float:
        return len(self.covered) / self.sample_count


def _greedy_core(
    samples: SampleSet,
    target: Frame,
    candidates: Sequence[Frame],
    cfg: SelectionConfig,
    threads: int | None = None,
) -> GreedyResult:
    def vis_set(c: Frame) -> tuple[int, frozenset]:
        mask = _visible_mask(samples, target, c, cfg.epsilon)
        return c.id, frozenset(np.flatnonzero(mask).tolist())

    if threads and threads > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sets = list(pool.map(vis_set, candidates))
    else:
        sets = [vis_set(c) for c in candidates]
    chosen, covered, gains = greedy_max_coverage(sets, cfg.k)
    return GreedyResult(
        chosen_ids=tuple(chosen),
        covered=covered,
        gains=tuple(gains),
        sample_count=len(samples),
    )


def greedy_select(
    target: Frame,
    candidates: Sequence[Frame],
    cfg: SelectionConfig,
    threads: int | None = None,
) -> GreedyResult:
    """Greedy k-context selection for one target; covered elements are
    indices into the target's stride-grid sample set."""
    samples = target_samples(target, cfg.sample_stride)
    return _greedy_core(samples, target, candidates, cfg, threads)


def redundant(
    target: Frame, groups: Iterable[ViewGroup], cfg: SelectionConfig
) -> bool:
    """True iff some accepted group's target is within BOTH thresholds."""
    for g in groups:
        d, theta = _pose_gap(target.pose, g.target_pose)
        if d < cfg.tau_t and theta < cfg.tau_theta_deg:
            return True
    return False


def select_groups(
    frames: Sequence[Frame],
    cfg: SelectionConfig,
    scene: str = "",
    threads: int | None = None,
) -> SelectionOutcome:
    """Run the full selection pipeline over a scene's frames.

    Targets are visited in ascending id; the result lists accepted groups in
    that order and counts every rejection by reason.  Deterministic for a
    fixed input and config, regardless of ``threads``.
    """
    ordered = sorted(frames, key=lambda f: f.id)
    outcome = SelectionOutcome(groups=[])

    def reject(reason: str):
        outcome.rejections[reason] = outcome.rejections.get(reason, 0) + 1

    for target in ordered:
        others = [f for f in ordered if f.id != target.id]
        if len(others) < cfg.k:
            reject(REASON_TOO_FEW)
            continue
        cands = [c for c in others if pose_filter(target, c, cfg)]
        if cfg.distinctness == "pairwise":
            cands = _pairwise_distinct(cands, cfg)
        if len(cands) < cfg.k:
            reject(REASON_POSE_FILTER)
            continue
        try:
            samples = target_samples(target, cfg.sample_stride)
        except EmptySamples:
            reject(REASON_NO_SAMPLES)
            continue
        result = _greedy_core(samples, target, cands, cfg, threads)
        if result.coverage < cfg.gamma:
            reject(REASON_COVERAGE)
            continue
        if redundant(target, outcome.groups, cfg):
            reject(REASON_REDUNDANCY)
            continue
        outcome.groups.append(
            ViewGroup(
                target_id=target.id,
                context_ids=result.chosen_ids,
                coverage=result.coverage,
                target_pose=target.pose,
                gains=result.gains,
                scene=scene,
            )
        )
    return outcome


def build_groups(
    frames: Sequence[Frame], cfg: SelectionConfig, scene: str = ""
) -> list[ViewGroup]:
    """Accepted view groups in target-id order (see :func:`select_groups`)."""
    return select_groups(frames, cfg, scene).groups
