"""Detection and localization metrics.

Detection: accuracy / TPR / FPR from the confusion matrix of hard
decisions, AUROC with ties counted one half, and the full ROC curve (one
point per distinct score) for plotting and the trapezoid cross-check, all
through `sklearn.metrics`. Labels are +1 forged, -1 authentic throughout.

Localization: PCK@rho per keypoint type. Predicted skeletons are matched
to ground-truth skeletons greedily by mean keypoint distance; a keypoint
counts as correct when its distance to the ground truth is at most
`rho * b`, `b` being the ground-truth bounding-box diagonal. Every visible
ground-truth keypoint is one trial; unmatched ground-truth persons
contribute misses.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray
from sklearn import metrics as skm

from securepose.pose_features import KEYPOINT_NAMES, NUM_KEYPOINTS, SkeletonPose

# ============================================================
# Detection
# ============================================================


@dataclass(frozen=True)
class DetectionMetrics:
    """Confusion counts and rates; a rate is None when its denominator is zero."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float | None:
        return (self.tp + self.tn) / self.total if self.total else None

    @property
    def tpr(self) -> float | None:
        positives = self.tp + self.fn
        return self.tp / positives if positives else None

    @property
    def fpr(self) -> float | None:
        negatives = self.fp + self.tn
        return self.fp / negatives if negatives else None

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "tpr": self.tpr,
            "fpr": self.fpr,
            "counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
        }


def _labels(values: Sequence[int] | NDArray[np.integer], what: str) -> NDArray[np.int64]:
    arr = np.asarray(values, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional")
    if not np.isin(arr, (-1, 1)).all():
        raise ValueError(f"{what} must be -1 or +1")
    return arr


def detection_metrics(
    decisions: Sequence[int] | NDArray[np.integer], labels: Sequence[int] | NDArray[np.integer]
) -> DetectionMetrics:
    d = _labels(decisions, "decisions")
    z = _labels(labels, "labels")
    if d.shape != z.shape:
        raise ValueError(f"{len(d)} decisions for {len(z)} labels")
    if not len(z):
        return DetectionMetrics(tp=0, fp=0, tn=0, fn=0)
    tn, fp, fn, tp = skm.confusion_matrix(z, d, labels=[-1, 1]).ravel().tolist()
    return DetectionMetrics(tp=tp, fp=fp, tn=tn, fn=fn)


def balanced_accuracy(tpr: float, fpr: float) -> float:
    """Accuracy on a set with equal numbers of positives and negatives."""
    return (tpr + (1.0 - fpr)) / 2.0


def _scored(
    scores: Sequence[float] | NDArray[np.floating], labels: Sequence[int] | NDArray[np.integer]
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    s = np.asarray(scores, dtype=np.float64)
    z = _labels(labels, "labels")
    if s.shape != z.shape:
        raise ValueError(f"{len(s)} scores for {len(z)} labels")
    if not (z == 1).any() or not (z == -1).any():
        raise ValueError("AUROC is undefined unless both classes are present")
    return s, z


def auroc(
    scores: Sequence[float] | NDArray[np.floating], labels: Sequence[int] | NDArray[np.integer]
) -> float:
    """P(score of a random positive > score of a random negative), ties count 1/2."""
    s, z = _scored(scores, labels)
    return float(skm.roc_auc_score(z, s))


@dataclass(frozen=True)
class RocCurve:
    fpr: NDArray[np.float64]
    tpr: NDArray[np.float64]
    thresholds: NDArray[np.float64]

    def area(self) -> float:
        return float(skm.auc(self.fpr, self.tpr))

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "fpr": self.fpr.tolist(),
            "tpr": self.tpr.tolist(),
            "thresholds": [float(t) if np.isfinite(t) else None for t in self.thresholds],
        }


def roc_curve(
    scores: Sequence[float] | NDArray[np.floating], labels: Sequence[int] | NDArray[np.integer]
) -> RocCurve:
    """ROC points for "forged iff score >= threshold", one point per distinct score.

    Starts at (0, 0) with an infinite threshold and ends at (1, 1).
    """
    s, z = _scored(scores, labels)
    fpr, tpr, thresholds = skm.roc_curve(z, s, pos_label=1, drop_intermediate=False)
    return RocCurve(
        fpr=np.asarray(fpr, dtype=np.float64),
        tpr=np.asarray(tpr, dtype=np.float64),
        thresholds=np.asarray(thresholds, dtype=np.float64),
    )


# ============================================================
# PCK
# ============================================================


def bbox_diagonal(pose: SkeletonPose) -> float:
    box = pose.bbox()
    if box is None:
        return 0.0
    x0, y0, x1, y1 = box
    return float(np.hypot(x1 - x0, y1 - y0))


def mean_keypoint_distance(a: SkeletonPose, b: SkeletonPose) -> float:
    """Mean distance over keypoints visible in both poses; inf when none are."""
    shared = a.visible & b.visible
    if not shared.any():
        return float("inf")
    d = np.linalg.norm(a.keypoints[shared] - b.keypoints[shared], axis=1)
    return float(d.mean())


def match_poses(
    predicted: Sequence[SkeletonPose], truth: Sequence[SkeletonPose]
) -> dict[int, int]:
    """Greedy ground-truth index -> prediction index assignment by mean distance."""
    pairs = sorted(
        (mean_keypoint_distance(p, t), ti, pi)
        for ti, t in enumerate(truth)
        for pi, p in enumerate(predicted)
    )
    out: dict[int, int] = {}
    used: set[int] = set()
    for dist, ti, pi in pairs:
        if not np.isfinite(dist) or ti in out or pi in used:
            continue
        out[ti] = pi
        used.add(pi)
    return out


@dataclass
class PckCounts:
    """Per-keypoint hit and trial counts, accumulated over frames."""

    correct: NDArray[np.int64] = field(default_factory=lambda: np.zeros(NUM_KEYPOINTS, np.int64))
    total: NDArray[np.int64] = field(default_factory=lambda: np.zeros(NUM_KEYPOINTS, np.int64))

    def __iadd__(self, other: PckCounts) -> PckCounts:
        self.correct = self.correct + other.correct
        self.total = self.total + other.total
        return self

    @property
    def persons_seen(self) -> bool:
        return bool(self.total.any())


def pck_counts(
    predicted: Sequence[SkeletonPose], truth: Sequence[SkeletonPose], rho: float
) -> PckCounts:
    if not 0 < rho < 1:
        raise ValueError(f"rho must be in (0, 1), got {rho}")
    counts = PckCounts()
    matched = match_poses(predicted, truth)
    for ti, gt in enumerate(truth):
        counts.total += gt.visible
        pi = matched.get(ti)
        if pi is None:
            continue
        pred = predicted[pi]
        both = gt.visible & pred.visible
        dist = np.linalg.norm(pred.keypoints - gt.keypoints, axis=1)
        counts.correct += both & (dist <= rho * bbox_diagonal(gt))
    return counts


@dataclass(frozen=True)
class PckResult:
    rho: float
    per_keypoint: NDArray[np.float64]  # NaN for types with no ground truth

    @property
    def mpck(self) -> float:
        return float(np.nanmean(self.per_keypoint))

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "rho": self.rho,
            "mpck": self.mpck,
            "perKeypoint": {
                name: (None if np.isnan(v) else float(v))
                for name, v in zip(KEYPOINT_NAMES, self.per_keypoint, strict=True)
            },
        }


def pck_from_counts(counts: PckCounts, rho: float) -> PckResult:
    if not counts.persons_seen:
        raise ValueError("PCK is undefined without ground-truth persons")
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(counts.total > 0, counts.correct / counts.total, np.nan)
    return PckResult(rho=rho, per_keypoint=per.astype(np.float64))


def pck(
    predicted: Sequence[SkeletonPose], truth: Sequence[SkeletonPose], rho: float
) -> PckResult:
    """PCK@rho for one set of predictions against one set of ground truth."""
    return pck_from_counts(pck_counts(predicted, truth, rho), rho)


def pck_table(
    frames: Sequence[tuple[Sequence[SkeletonPose], Sequence[SkeletonPose]]],
    thresholds: Sequence[float],
) -> dict[float, PckResult]:
    """PCK at every threshold, pooled over `(predicted, truth)` frame pairs."""
    out: dict[float, PckResult] = {}
    for rho in thresholds:
        counts = PckCounts()
        for predicted, truth in frames:
            counts += pck_counts(predicted, truth, rho)
        out[rho] = pck_from_counts(counts, rho)
    return out


# ============================================================
# Report
# ============================================================


@dataclass
class MetricsReport:
    detection: DetectionMetrics
    auroc: float | None = None
    roc: RocCurve | None = None
    per_attack: dict[str, DetectionMetrics] = field(default_factory=dict)
    per_people: dict[int, DetectionMetrics] = field(default_factory=dict)
    pck: dict[str, dict[float, PckResult]] = field(default_factory=dict)
    pose_estimation: dict[float, PckResult] = field(default_factory=dict)
    pose_refiner: bool | None = None
    runtime_ms: dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "detection": self.detection.to_json_dict(),
            "auroc": self.auroc,
            "roc": self.roc.to_json_dict() if self.roc is not None else None,
            "perAttack": {k: v.to_json_dict() for k, v in self.per_attack.items()},
            "perPeople": {str(k): v.to_json_dict() for k, v in sorted(self.per_people.items())},
            "pck": {
                group: [r.to_json_dict() for _, r in sorted(table.items())]
                for group, table in self.pck.items()
            },
            "poseEstimation": (
                {
                    "refiner": self.pose_refiner,
                    "pck": [r.to_json_dict() for _, r in sorted(self.pose_estimation.items())],
                }
                if self.pose_estimation
                else None
            ),
            "runtimeMs": self.runtime_ms,
        }


def breakdown(
    decisions: Sequence[int] | NDArray[np.integer],
    labels: Sequence[int] | NDArray[np.integer],
    groups: Sequence[Any],
) -> dict[Any, DetectionMetrics]:
    """Detection metrics restricted to each distinct group value."""
    d = np.asarray(decisions)
    z = np.asarray(labels)
    keys = list(groups)
    out: dict[Any, DetectionMetrics] = {}
    for key in dict.fromkeys(keys):
        mask = np.array([k == key for k in keys])
        out[key] = detection_metrics(d[mask], z[mask])
    return out


def attack_breakdown(
    decisions: Sequence[int] | NDArray[np.integer],
    labels: Sequence[int] | NDArray[np.integer],
    attacks: Sequence[str | None],
) -> dict[str, DetectionMetrics]:
    """Each attack kind scored against the shared authentic negatives."""
    d = np.asarray(decisions)
    z = np.asarray(labels)
    kinds = sorted({a for a in attacks if a is not None})
    out: dict[str, DetectionMetrics] = {}
    for kind in kinds:
        mask = np.array([a is None or a == kind for a in attacks])
        out[kind] = detection_metrics(d[mask], z[mask])
    return out


def build_report(
    scores: Sequence[float] | NDArray[np.floating],
    decisions: Sequence[int] | NDArray[np.integer],
    labels: Sequence[int] | NDArray[np.integer],
    *,
    attacks: Sequence[str | None] = (),
    people: Sequence[int] = (),
    pck_tables: Mapping[str, dict[float, PckResult]] | None = None,
    pose_pck: Mapping[float, PckResult] | None = None,
    pose_refiner: bool | None = None,
    runtime_ms: Mapping[str, float] | None = None,
) -> MetricsReport:
    z = np.asarray(labels)
    both = bool((z == 1).any() and (z == -1).any())
    return MetricsReport(
        detection=detection_metrics(decisions, labels),
        auroc=auroc(scores, labels) if both else None,
        roc=roc_curve(scores, labels) if both else None,
        per_attack=attack_breakdown(decisions, labels, attacks) if attacks else {},
        per_people=breakdown(decisions, labels, people) if people else {},
        pck=dict(pck_tables or {}),
        pose_estimation=dict(pose_pck or {}),
        pose_refiner=pose_refiner,
        runtime_ms=dict(runtime_ms or {}),
    )
