"""Tests for localizer.py — residual peaks, limb matching and skeleton recovery."""

from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from securepose.config import LocalizerConfig
from securepose.localizer import (
    SuspiciousKeypoints,
    abnormal_poses,
    associate,
    combine_paf,
    greedy_limb_matching,
    limb_score_matrix,
    localize_frame,
    localize_gop,
    nms,
    residual,
    write_localization_report,
)
from securepose.metrics import pck
from securepose.pose_features import (
    LIMBS,
    NUM_KEYPOINTS,
    SkeletonPose,
    pixels_to_normalized,
    render_jhm,
    render_paf,
)
from securepose.scene_sim import authentic_sample, inject_tampering, render_gop, simulate_timeline

H = W = 64
FPS = 7.5


def _standing(cx: float, person_id: int = 0) -> SkeletonPose:
    offsets = np.array(
        [
            (0, -12), (0, -9), (-3, -8), (3, -8), (-4, -4), (4, -4), (-4, 0),
            (4, 0), (-2, 1), (2, 1), (-2, 6), (2, 6), (-2, 11), (2, 11),
        ],
        dtype=float,
    )  # fmt: skip
    px = offsets + np.array([cx, 30.0])
    return SkeletonPose(person_id, pixels_to_normalized(px, H, W), np.ones(14, dtype=bool))


def _frame(poses: list[SkeletonPose]) -> tuple[np.ndarray, np.ndarray]:
    return render_jhm(poses, H, W), render_paf(poses, H, W)


def _max_total(scores: np.ndarray) -> float:
    """Exhaustive search over partial one-to-one assignments for the largest total score."""
    rows, cols = scores.shape
    best = 0.0
    for assignment in itertools.product(range(-1, cols), repeat=rows):
        used = [c for c in assignment if c >= 0]
        if len(used) != len(set(used)):
            continue
        picked = [scores[r, c] for r, c in enumerate(assignment) if c >= 0]
        if all(np.isfinite(picked)):
            best = max(best, float(sum(picked)))
    return best


def _greedy_total(scores: np.ndarray) -> float:
    return float(sum(s for _, _, s in greedy_limb_matching(scores)))


# ============================================================
# Residuals and NMS
# ============================================================


class TestResidual:
    def test_identical_maps_cancel(self) -> None:
        s = np.random.default_rng(0).uniform(size=(8, 8, 14))
        assert not residual(s, s).any()

    def test_missing_peak_keeps_height(self) -> None:
        s_i = np.zeros((8, 8, 14))
        s_i[3, 4, 2] = 0.7
        d = residual(s_i, np.zeros_like(s_i))
        assert d[3, 4, 2] == pytest.approx(0.7)

    def test_symmetric_and_nonnegative(self) -> None:
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 5, 5, 14))
        np.testing.assert_array_equal(residual(a, b), residual(b, a))
        assert residual(a, b).min() >= 0

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ValueError):
            residual(np.zeros((4, 4, 14)), np.zeros((4, 5, 14)))


class TestNms:
    def test_zero_map(self) -> None:
        keypoints = nms(np.zeros((H, W, 14)))
        assert keypoints.counts == (0,) * NUM_KEYPOINTS
        assert keypoints.total == 0

    def test_gaussian_peak_subpixel(self) -> None:
        px = np.array([[20.3, 30.6]] * NUM_KEYPOINTS)
        pose = SkeletonPose(0, pixels_to_normalized(px, H, W), np.eye(14, dtype=bool)[6])
        d = 0.9 * render_jhm([pose], H, W)
        keypoints = nms(d, window=5, tau=0.1)
        assert keypoints.counts == tuple(1 if j == 6 else 0 for j in range(14))
        (cand,) = keypoints.by_type[6]
        assert abs(cand.x - 20.3) < 0.5
        assert abs(cand.y - 30.6) < 0.5
        assert cand.score == pytest.approx(d.max(), rel=1e-6)

    def test_separated_and_close_peaks(self) -> None:
        d = np.zeros((32, 32, 14))
        d[10, 10, 0] = 0.9
        d[10, 20, 0] = 0.8
        d[10, 10, 1] = 0.9
        d[10, 12, 1] = 0.8
        keypoints = nms(d, window=5, tau=0.1)
        assert keypoints.counts[0] == 2
        assert keypoints.counts[1] == 1
        (kept,) = keypoints.by_type[1]
        assert (kept.x, kept.y) == (10.0, 10.0)

    def test_candidates_are_strict_window_maxima(self) -> None:
        rng = np.random.default_rng(2)
        d = rng.uniform(size=(24, 24, 14))
        keypoints = nms(d, window=5, tau=0.1)
        assert keypoints.total > 0
        for j, cands in enumerate(keypoints.by_type):
            for cand in cands:
                (r,), (c,) = np.nonzero(d[:, :, j] == cand.score)
                patch = d[max(r - 2, 0) : r + 3, max(c - 2, 0) : c + 3, j]
                assert cand.score >= 0.1
                assert np.sum(patch >= cand.score) == 1
                assert abs(cand.x - c) <= 0.5
                assert abs(cand.y - r) <= 0.5

    def test_below_threshold(self) -> None:
        d = np.zeros((16, 16, 14))
        d[5, 5, 3] = 0.09
        assert nms(d, tau=0.1).total == 0

    @pytest.mark.parametrize("kwargs", [{"window": 4}, {"window": 1}, {"tau": 0.0}])
    def test_invalid(self, kwargs: dict[str, Any]) -> None:
        with pytest.raises(ValueError):
            nms(np.zeros((8, 8, 14)), **kwargs)


# ============================================================
# Association
# ============================================================


class TestCombinePaf:
    def test_examples(self) -> None:
        rng = np.random.default_rng(3)
        a, b = rng.uniform(-1, 1, (2, 4, 4, 2, 13))
        np.testing.assert_allclose(combine_paf(a, np.zeros_like(a)), a, rtol=1e-6)
        np.testing.assert_allclose(combine_paf(a, a), 2 * a, rtol=1e-6)
        np.testing.assert_array_equal(combine_paf(a, b), combine_paf(b, a))

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ValueError):
            combine_paf(np.zeros((4, 4, 2, 13)), np.zeros((4, 4, 2, 12)))


class TestGreedyMatching:
    def test_each_row_and_column_once(self) -> None:
        scores = np.array([[0.9, 0.8], [0.7, 0.1]])
        assert greedy_limb_matching(scores) == [(0, 0, 0.9), (1, 1, 0.1)]

    def test_non_finite_never_picked(self) -> None:
        scores = np.array([[-np.inf, 0.3], [-np.inf, 0.5]])
        assert greedy_limb_matching(scores) == [(1, 1, 0.5)]

    def test_greedy_can_fall_short_of_max_total(self) -> None:
        scores = np.array([[10.0, 9.0], [9.0, 0.0]])
        assert _greedy_total(scores) == 10.0
        assert _max_total(scores) == 18.0

    @pytest.mark.parametrize("seed", range(200))
    def test_within_half_of_max_total(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        rows, cols = rng.integers(1, 4, size=2)
        scores = rng.uniform(0.05, 1.0, size=(rows, cols))
        scores[rng.uniform(size=scores.shape) < 0.3] = -np.inf
        greedy, best = _greedy_total(scores), _max_total(scores)
        assert greedy <= best + 1e-12
        assert greedy >= 0.5 * best - 1e-12

    @pytest.mark.parametrize("centers", [(16.0, 46.0), (12.0, 32.0, 52.0)])
    def test_separated_people_reach_max_total(self, centers: tuple[float, ...]) -> None:
        """Holds for rendered people standing apart, not for arbitrary score matrices.

        With no limb field between different people, cross-person pairs are
        inadmissible and every limb's matrix is a one-to-one pattern, so the
        greedy total equals the exhaustive maximum.
        """
        people = [_standing(cx, i) for i, cx in enumerate(centers)]
        jhm, paf = _frame(people)
        keypoints = nms(jhm)
        assert keypoints.counts == (len(centers),) * NUM_KEYPOINTS
        config = LocalizerConfig()
        for limb in range(len(LIMBS)):
            scores = limb_score_matrix(keypoints, paf, limb, config)
            assert len(greedy_limb_matching(scores)) == len(centers)
            assert _greedy_total(scores) == pytest.approx(_max_total(scores), rel=1e-12)


class TestAssociate:
    def test_empty(self) -> None:
        assert associate(SuspiciousKeypoints.empty(H, W), np.zeros((H, W, 2, 13))) == []

    def test_single_person_fully_recovered(self) -> None:
        person = _standing(30.0)
        jhm, paf = _frame([person])
        poses = associate(nms(jhm), paf)
        assert len(poses) == 1
        (found,) = poses
        assert found.num_keypoints == 14
        np.testing.assert_allclose(found.pose.keypoints, person.keypoints, atol=1e-3)
        assert all(found.connected(c) for c in range(len(LIMBS)))

    def test_two_people_disjoint(self) -> None:
        people = [_standing(16.0, 0), _standing(46.0, 1)]
        jhm, paf = _frame(people)
        keypoints = nms(jhm)
        poses = associate(keypoints, paf)
        assert len(poses) == 2
        seen: set[tuple[int, int]] = set()
        for found in poses:
            members = set(found.candidates.items())
            assert not members & seen
            seen |= members
            assert len(found.candidates) == len({j for j, _ in members})
        assert len(seen) == keypoints.total
        xs = sorted(float(np.mean(p.pose.keypoints[:, 0])) for p in poses)
        assert xs[0] < 0.5 < xs[1]

    def test_box_padded_and_clipped(self) -> None:
        jhm, paf = _frame([_standing(30.0)])
        (found,) = associate(nms(jhm), paf)
        x0, y0, x1, y1 = found.box
        kx, ky = found.pose.keypoints[:, 0], found.pose.keypoints[:, 1]
        assert x0 < kx.min() and x1 > kx.max()
        assert y0 < ky.min() and y1 > ky.max()
        width = kx.max() - kx.min()
        assert kx.min() - x0 == pytest.approx(0.1 * width)
        assert 0.0 <= x0 and x1 <= 1.0

    def test_no_paf_support_gives_no_skeleton(self) -> None:
        jhm, _ = _frame([_standing(30.0)])
        assert associate(nms(jhm), np.zeros((H, W, 2, 13))) == []

    def test_paf_shape_mismatch(self) -> None:
        with pytest.raises(ValueError):
            associate(SuspiciousKeypoints.empty(H, W), np.zeros((H, W, 2, 12)))


# ============================================================
# Frames and GOPs
# ============================================================


class TestLocalizeGop:
    def test_authentic_gop_is_empty(self) -> None:
        frames = simulate_timeline(3, 2 / FPS, FPS, seed=0).frames
        jhm, paf = render_gop(frames)
        result = localize_gop("gop_00000", jhm, jhm, paf, paf)
        assert result.num_abnormal == 0
        assert len(result.frames) == 2

    def test_playback_to_empty_over_three_people(self) -> None:
        frames = simulate_timeline(3, 2 / FPS, FPS, seed=1, behaviours=["stand"] * 3).frames
        jhm, paf = render_gop(frames)
        empty_jhm, empty_paf = np.zeros_like(jhm), np.zeros_like(paf)
        result = localize_gop("g", empty_jhm, jhm, empty_paf, paf)
        assert [len(f) for f in result.frames] == [3, 3]

    def test_remove_two_of_three(self) -> None:
        frames = simulate_timeline(3, 2 / FPS, FPS, seed=2, behaviours=["stand"] * 3).frames
        rf = np.zeros((2, 9, 30, 9), dtype=np.float32)
        sample = authentic_sample("g", 0, 0, rf, frames)
        forged = inject_tampering(sample, [0, 2], "remove")
        result = localize_gop("g", forged.jhm, sample.jhm, forged.paf, sample.paf)
        for found, truth in zip(result.frames, forged.abnormal_poses, strict=True):
            assert len(found) == 2
            assert np.nanmin(pck(abnormal_poses(found), truth, 0.1).per_keypoint) == 1.0

    @pytest.mark.parametrize("seed", range(50))
    def test_oracle_features_recover_removed_person(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        people = int(rng.integers(1, 5))
        frames = simulate_timeline(people, 2 / FPS, FPS, seed=seed).frames
        rf = np.zeros((2, 9, 30, 9), dtype=np.float32)
        sample = authentic_sample(f"gop_{seed:05d}", seed, 0, rf, frames)
        forged = inject_tampering(sample, [int(rng.integers(people))], "remove")
        result = localize_gop(sample.gop_id, forged.jhm, sample.jhm, forged.paf, sample.paf)
        for found, truth in zip(result.frames, forged.abnormal_poses, strict=True):
            assert len(truth) == 1
            assert np.nanmin(pck(abnormal_poses(found), truth, 0.1).per_keypoint) == 1.0

    def test_frame_count_mismatch(self) -> None:
        z = np.zeros((2, H, W, 14))
        p = np.zeros((2, H, W, 2, 13))
        with pytest.raises(ValueError):
            localize_gop("g", z, z[:1], p, p)

    def test_custom_config(self) -> None:
        jhm, paf = _frame([_standing(30.0)])
        strict = LocalizerConfig(min_keypoints=15)
        assert localize_frame(jhm, np.zeros_like(jhm), paf, np.zeros_like(paf), strict) == []


class TestReport:
    def test_json_layout(self, tmp_path: Path) -> None:
        jhm, paf = _frame([_standing(30.0)])
        result = localize_gop("gop_00007", jhm[None], 0 * jhm[None], paf[None], 0 * paf[None])
        path = write_localization_report(tmp_path / "localization.json", [result])
        body = json.loads(path.read_text())
        assert body["version"] == 1
        (gop,) = body["gops"]
        assert gop["gopId"] == "gop_00007"
        (frame,) = gop["frames"]
        (skeleton,) = frame
        assert len(skeleton["keypoints"]) == 14
        assert len(skeleton["connections"]) == 13
        assert len(skeleton["box"]) == 4
