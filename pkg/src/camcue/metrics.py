"""Thresholded SE(3) pose-accuracy metrics.

Rotation error is the geodesic angle between the ground-truth rotation and
the polar-orthonormalized predicted block (regressed matrices carry no
orthonormality guarantee); translation error is the Euclidean gap between
translation columns.  Reports give, per threshold, the percentage of
samples with error at or below it (inclusive boundary).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySampleSet, SingularMatrix, SingularRotation
from .geometry import CameraPose, RawPose, decompose, orthonormalize, rotation_geodesic_deg

DEFAULT_ROT_THRESHOLDS_DEG = (5.0, 10.0, 20.0)
DEFAULT_TRANS_THRESHOLDS = (0.1, 0.3, 0.5)


@dataclass(frozen=True)
class PoseErrorSample:
    """Errors for one (predicted, ground-truth) pose pair.

    ``rot_raw_frobenius`` is a diagnostic: the Frobenius gap of the raw,
    un-orthonormalized rotation block.  It never enters threshold counts.
    """

    rot_err_deg: float
    trans_err: float
    rot_raw_frobenius: float = float("nan")

    def __post_init__(self):
        if not (0.0 <= self.rot_err_deg <= 180.0):
            raise ValueError("rotation error must be in [0, 180] degrees")
        if self.trans_err < 0.0:
            raise ValueError("translation error must be >= 0")


@dataclass(frozen=True)
class PoseAccuracyReport:
    """Percentage of samples within each rotation/translation threshold."""

    n_samples: int
    unit: str
    rot: dict[float, float]
    trans: dict[float, float]

    def to_json_dict(self) -> dict:
        return {
            "n": self.n_samples,
            "unit": self.unit,
            "rot": {_fmt(t): self.rot[t] for t in sorted(self.rot)},
            "trans": {_fmt(t): self.trans[t] for t in sorted(self.trans)},
        }


def _fmt(threshold: float) -> str:
    return f"{threshold:g}"


def pose_errors(pred: RawPose | CameraPose, gt: CameraPose) -> PoseErrorSample:
    """Rotation (degrees, after polar projection) and translation errors."""
    p = decompose(pred)
    g = decompose(gt)
    try:
        r_pred = orthonormalize(p.r)
    except SingularMatrix as exc:
        raise SingularRotation(f"predicted rotation block is singular: {exc}") from exc
    return PoseErrorSample(
        rot_err_deg=rotation_geodesic_deg(r_pred, g.r),
        trans_err=float(np.linalg.norm(p.t - g.t)),
        rot_raw_frobenius=float(np.linalg.norm(p.r - g.r)),
    )


def accuracy_report(
    samples: Sequence[PoseErrorSample] | Iterable[PoseErrorSample],
    rot_thresholds_deg: Sequence[float] = DEFAULT_ROT_THRESHOLDS_DEG,
    trans_thresholds: Sequence[float] = DEFAULT_TRANS_THRESHOLDS,
    unit: str = "m",
) -> PoseAccuracyReport:
    """Fraction (as a percentage) of samples with error <= each threshold."""
    samples = list(samples)
    if not samples:
        raise EmptySampleSet("accuracy report needs at least one sample")
    n = len(samples)
    rot_errs = np.array([s.rot_err_deg for s in samples])
    trans_errs = np.array([s.trans_err for s in samples])
    rot = {float(t): 100.0 * float(np.count_nonzero(rot_errs <= t)) / n
           for t in rot_thresholds_deg}
    trans = {float(t): 100.0 * float(np.count_nonzero(trans_errs <= t)) / n
             for t in trans_thresholds}
    return PoseAccuracyReport(n_samples=n, unit=unit, rot=rot, trans=trans)
