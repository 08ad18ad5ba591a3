"""Tests for metrics.py — detection rates, AUROC/ROC and PCK."""

from __future__ import annotations

import numpy as np
import pytest

from securepose.metrics import (
    DetectionMetrics,
    auroc,
    balanced_accuracy,
    bbox_diagonal,
    build_report,
    detection_metrics,
    match_poses,
    pck,
    pck_counts,
    pck_table,
    roc_curve,
)
from securepose.pose_features import NUM_KEYPOINTS, SkeletonPose


def _pose(person_id: int, seed: int, *, offset: float = 0.0) -> SkeletonPose:
    rng = np.random.default_rng(seed)
    kp = rng.uniform(0.2, 0.8, size=(NUM_KEYPOINTS, 2))
    kp[:, 0] += offset
    return SkeletonPose(person_id, kp, np.ones(NUM_KEYPOINTS, dtype=bool))


def _moved(pose: SkeletonPose, delta: np.ndarray) -> SkeletonPose:
    return SkeletonPose(pose.person_id, pose.keypoints + delta, pose.visible.copy())


# ============================================================
# Detection
# ============================================================


class TestDetectionMetrics:
    def test_all_correct(self) -> None:
        m = detection_metrics([1, -1, 1, -1], [1, -1, 1, -1])
        assert m.accuracy == 1.0
        assert m.fpr == 0.0
        assert m.tpr == 1.0

    def test_half_right(self) -> None:
        m = detection_metrics([1, -1, 1, -1], [1, 1, -1, -1])
        assert (m.accuracy, m.tpr, m.fpr) == (0.5, 0.5, 0.5)

    def test_no_positives_leaves_tpr_absent(self) -> None:
        m = detection_metrics([-1, 1], [-1, -1])
        assert m.tpr is None
        assert m.fpr == 0.5
        assert m.to_json_dict()["tpr"] is None

    def test_confusion_oracle(self) -> None:
        rng = np.random.default_rng(0)
        d = rng.choice([-1, 1], 200)
        z = rng.choice([-1, 1], 200)
        m = detection_metrics(d, z)
        tp = sum(1 for a, b in zip(d, z, strict=True) if a == 1 and b == 1)
        tn = sum(1 for a, b in zip(d, z, strict=True) if a == -1 and b == -1)
        assert (m.tp, m.tn, m.total) == (tp, tn, 200)
        assert m.accuracy == pytest.approx((tp + tn) / 200)

    def test_confusion_layout(self) -> None:
        m = detection_metrics([1, 1, -1, -1, -1], [1, -1, -1, 1, 1])
        assert (m.tp, m.fp, m.tn, m.fn) == (1, 1, 1, 2)

    def test_empty(self) -> None:
        assert detection_metrics([], []).accuracy is None

    def test_published_rates_are_consistent(self) -> None:
        assert balanced_accuracy(0.992, 0.018) == pytest.approx(0.987)
        # 1000 positives, 1000 negatives at the same rates.
        m = DetectionMetrics(tp=992, fn=8, fp=18, tn=982)
        assert m.accuracy == pytest.approx(0.987)
        assert m.tpr == pytest.approx(0.992)
        assert m.fpr == pytest.approx(0.018)

    @pytest.mark.parametrize(
        "decisions,labels", [([1, 0], [1, -1]), ([1], [1, -1]), ([[1]], [[1]])]
    )
    def test_invalid(self, decisions: list[int], labels: list[int]) -> None:
        with pytest.raises(ValueError):
            detection_metrics(decisions, labels)


class TestAuroc:
    def test_separated(self) -> None:
        assert auroc([0.9, 0.8, -0.1, -0.5], [1, 1, -1, -1]) == 1.0
        assert auroc([-0.9, -0.8, 0.1, 0.5], [1, 1, -1, -1]) == 0.0

    def test_all_ties(self) -> None:
        assert auroc([0.2] * 6, [1, -1, 1, -1, 1, -1]) == 0.5

    @pytest.mark.parametrize("seed", range(10))
    def test_pairwise_oracle(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        n = 80
        s = np.round(rng.normal(size=n), 1)  # coarse rounding forces ties
        z = rng.choice([-1, 1], n)
        pos, neg = s[z == 1], s[z == -1]
        wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
        assert abs(auroc(s, z) - wins / (len(pos) * len(neg))) < 1e-9

    @pytest.mark.parametrize("seed", range(10))
    def test_trapezoid_matches_rank(self, seed: int) -> None:
        rng = np.random.default_rng(100 + seed)
        s = np.round(rng.uniform(-1, 1, 60), 1)
        z = rng.choice([-1, 1], 60)
        assert abs(roc_curve(s, z).area() - auroc(s, z)) < 1e-9

    def test_single_class(self) -> None:
        with pytest.raises(ValueError):
            auroc([0.1, 0.2], [1, 1])

    def test_roc_endpoints(self) -> None:
        curve = roc_curve([0.9, 0.1, 0.4, -0.3], [1, -1, 1, -1])
        assert (curve.fpr[0], curve.tpr[0]) == (0.0, 0.0)
        assert (curve.fpr[-1], curve.tpr[-1]) == (1.0, 1.0)
        assert np.all(np.diff(curve.fpr) >= 0)
        assert curve.to_json_dict()["thresholds"][0] is None

    def test_one_point_per_distinct_score(self) -> None:
        curve = roc_curve([0.9, 0.4, 0.4, 0.1], [1, 1, -1, -1])
        np.testing.assert_allclose(curve.thresholds[1:], [0.9, 0.4, 0.1])
        np.testing.assert_allclose(curve.fpr, [0.0, 0.0, 0.5, 1.0])
        np.testing.assert_allclose(curve.tpr, [0.0, 0.5, 1.0, 1.0])
        assert curve.area() == pytest.approx(0.875)
        assert auroc([0.9, 0.4, 0.4, 0.1], [1, 1, -1, -1]) == pytest.approx(0.875)


# ============================================================
# PCK
# ============================================================


class TestPck:
    def test_perfect_predictions(self) -> None:
        truth = [_pose(0, 1), _pose(1, 2, offset=0.5)]
        for rho in (0.05, 0.5):
            result = pck(truth, truth, rho)
            np.testing.assert_array_equal(result.per_keypoint, 1.0)
            assert result.mpck == 1.0

    def test_boundary_is_inclusive(self) -> None:
        # Dyadic coordinates keep the distance arithmetic exact: the box is
        # 3/8 x 1/2, so the diagonal is 5/8 and a quarter of it is 5/32.
        kp = np.full((NUM_KEYPOINTS, 2), 0.5)
        kp[0] = (0.25, 0.125)
        kp[1] = (0.625, 0.625)
        kp[4] = (0.5, 0.25)
        truth = SkeletonPose(0, kp, np.ones(NUM_KEYPOINTS, dtype=bool))
        assert bbox_diagonal(truth) == 0.625
        delta = np.zeros((NUM_KEYPOINTS, 2))
        delta[4, 1] = 5 / 32
        result = pck([_moved(truth, delta)], [truth], 0.25)
        assert result.per_keypoint[4] == 1.0
        delta[4, 1] = 5 / 32 + 1e-6
        assert pck([_moved(truth, delta)], [truth], 0.25).per_keypoint[4] == 0.0

    def test_loop_oracle(self) -> None:
        rng = np.random.default_rng(4)
        truth = [_pose(i, 10 + i, offset=0.3 * i) for i in range(2)]
        predicted = [_moved(t, rng.normal(0.0, 0.03, (NUM_KEYPOINTS, 2))) for t in truth]
        for rho in (0.05, 0.1, 0.25):
            result = pck(predicted, truth, rho)
            for j in range(NUM_KEYPOINTS):
                hits = 0
                for p, t in zip(predicted, truth, strict=True):
                    b = bbox_diagonal(t)
                    hits += int(np.linalg.norm(p.keypoints[j] - t.keypoints[j]) <= rho * b)
                assert result.per_keypoint[j] == hits / 2

    def test_unmatched_truth_counts_as_misses(self) -> None:
        truth = [_pose(0, 5), _pose(1, 6, offset=0.5)]
        counts = pck_counts([truth[0]], truth, 0.1)
        np.testing.assert_array_equal(counts.total, 2)
        np.testing.assert_array_equal(counts.correct, 1)

    def test_invisible_truth_keypoints_skipped(self) -> None:
        t = _pose(0, 7)
        visible = t.visible.copy()
        visible[0] = False
        truth = SkeletonPose(0, t.keypoints, visible)
        result = pck([truth], [truth], 0.1)
        assert np.isnan(result.per_keypoint[0])
        assert result.mpck == 1.0

    def test_greedy_person_matching(self) -> None:
        truth = [_pose(0, 8), _pose(1, 9, offset=0.5)]
        assert match_poses(truth[::-1], truth) == {0: 1, 1: 0}

    def test_mpck_monotone_in_rho(self) -> None:
        rng = np.random.default_rng(11)
        truth = [_pose(0, 12)]
        predicted = [_moved(truth[0], rng.normal(0.0, 0.05, (NUM_KEYPOINTS, 2)))]
        table = pck_table([(predicted, truth)], [0.05, 0.1, 0.25, 0.5])
        values = [table[r].mpck for r in (0.05, 0.1, 0.25, 0.5)]
        assert values == sorted(values)

    def test_no_truth(self) -> None:
        with pytest.raises(ValueError):
            pck([], [], 0.1)

    @pytest.mark.parametrize("rho", [0.0, 1.0])
    def test_rho_range(self, rho: float) -> None:
        with pytest.raises(ValueError):
            pck_counts([], [_pose(0, 0)], rho)


class TestReport:
    def test_json_layout(self) -> None:
        report = build_report(
            [0.8, -0.4, 0.3, -0.9],
            [1, -1, -1, -1],
            [1, -1, 1, -1],
            attacks=["playback", None, "tampering", None],
            people=[2, 0, 3, 2],
            runtime_ms={"detect": 12.5},
        )
        body = report.to_json_dict()
        assert body["detection"]["accuracy"] == 0.75
        assert body["auroc"] == pytest.approx(1.0)
        assert set(body["perAttack"]) == {"playback", "tampering"}
        assert body["perAttack"]["tampering"]["counts"]["fn"] == 1
        assert set(body["perPeople"]) == {"0", "2", "3"}
        assert body["runtimeMs"] == {"detect": 12.5}
        assert body["poseEstimation"] is None

    def test_single_class_has_no_auroc(self) -> None:
        report = build_report([0.1, 0.2], [1, 1], [1, 1])
        assert report.auroc is None
        assert report.roc is None
