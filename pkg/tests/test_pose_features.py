"""Tests for pose_features.py — Body-14 rendering and the weighted losses."""

from __future__ import annotations

import numpy as np
import pytest

from securepose.numcore import Tensor, gradcheck
from securepose.pose_features import (
    BODY14,
    LIMBS,
    NUM_KEYPOINTS,
    NUM_LIMBS,
    CrossModalPair,
    LossWeights,
    SkeletonPose,
    jhm_loss,
    jhm_weight_map,
    paf_loss,
    paf_weight_map,
    pixels_to_normalized,
    render_jhm,
    render_paf,
    total_cross_modal_loss,
)

H = W = 64


def _pose(points: dict[int, tuple[float, float]], person_id: int = 0) -> SkeletonPose:
    """Pose with only the given keypoints visible, positions in pixels."""
    kp = np.zeros((NUM_KEYPOINTS, 2))
    visible = np.zeros(NUM_KEYPOINTS, dtype=bool)
    for j, (px, py) in points.items():
        kp[j] = pixels_to_normalized(np.array([px, py]), H, W)
        visible[j] = True
    return SkeletonPose(person_id=person_id, keypoints=kp, visible=visible)


def _standing(cx: float, person_id: int = 0) -> SkeletonPose:
    offsets = np.array(
        [
            (0, -12), (0, -9), (-3, -8), (3, -8), (-4, -4), (4, -4), (-4, 0),
            (4, 0), (-2, 1), (2, 1), (-2, 6), (2, 6), (-2, 11), (2, 11),
        ],
        dtype=float,
    )  # fmt: skip
    pts = {j: (cx + dx, 30 + dy) for j, (dx, dy) in enumerate(offsets)}
    return _pose(pts, person_id)


class TestTopology:
    def test_body14_is_a_tree(self) -> None:
        assert BODY14.num_keypoints == 14
        assert BODY14.num_limbs == 13
        assert BODY14.is_tree()

    def test_limb_endpoints_valid(self) -> None:
        assert all(0 <= a < 14 and 0 <= b < 14 for a, b in LIMBS)


class TestSkeletonPose:
    def test_from_points_marks_outside_invisible(self) -> None:
        kp = np.full((14, 2), 0.5)
        kp[3] = (1.2, 0.5)
        pose = SkeletonPose.from_points(1, kp)
        assert not pose.visible[3]
        assert pose.visible.sum() == 13

    def test_json_round_trip(self) -> None:
        pose = _standing(20.0, person_id=3)
        back = SkeletonPose.from_json_dict(pose.to_json_dict())
        assert back.same_as(pose)

    def test_bad_shape(self) -> None:
        with pytest.raises(ValueError):
            SkeletonPose(0, np.zeros((13, 2)), np.ones(13, dtype=bool))

    def test_bbox_of_invisible_pose(self) -> None:
        assert _pose({}).bbox() is None


class TestRenderJhm:
    def test_no_poses(self) -> None:
        assert not render_jhm([], H, W).any()

    def test_peak_at_pixel_center(self) -> None:
        jhm = render_jhm([_pose({5: (10, 20)})], H, W, 1.5)
        assert jhm[20, 10, 5] == pytest.approx(1.0)
        assert jhm[..., 5].max() == pytest.approx(1.0)
        assert np.unravel_index(np.argmax(jhm[..., 5]), (H, W)) == (20, 10)
        assert not np.delete(jhm, 5, axis=-1).any()

    def test_coincident_keypoints_max_merge(self) -> None:
        a = _pose({0: (30, 30)}, 0)
        b = _pose({0: (30, 30)}, 1)
        np.testing.assert_array_equal(render_jhm([a, b], H, W), render_jhm([a], H, W))

    def test_values_in_unit_interval(self) -> None:
        jhm = render_jhm([_standing(16), _standing(40, 1)], H, W)
        assert jhm.min() >= 0.0
        assert jhm.max() <= 1.0

    def test_sparsity_with_four_people(self) -> None:
        people = [_standing(10 + 14 * i, i) for i in range(4)]
        jhm = render_jhm(people, H, W)
        assert np.mean(jhm < 0.01) >= 0.85

    def test_bad_sigma(self) -> None:
        with pytest.raises(ValueError):
            render_jhm([], H, W, 0.0)


class TestRenderPaf:
    def test_no_poses(self) -> None:
        assert not render_paf([], H, W).any()

    def test_horizontal_limb(self) -> None:
        # Limb 1 runs neck -> r_shoulder.
        paf = render_paf([_pose({1: (10, 20), 2: (30, 20)})], H, W, 1.5)
        np.testing.assert_allclose(paf[20, 15:26, :, 1], np.tile([1.0, 0.0], (11, 1)))
        assert not paf[40, 20, :, 1].any()
        norms = np.linalg.norm(paf[..., 1], axis=-1)
        assert norms.max() <= 1.0 + 1e-6

    def test_antiparallel_overlap_cancels(self) -> None:
        forward = _pose({1: (10, 20), 2: (30, 20)}, 0)
        backward = _pose({1: (30, 20), 2: (10, 20)}, 1)
        paf = render_paf([forward, backward], H, W)
        np.testing.assert_allclose(paf[20, 12:28, :, 1], 0.0, atol=1e-6)

    def test_zero_length_limb_ignored(self) -> None:
        paf = render_paf([_pose({1: (10, 20), 2: (10, 20)})], H, W)
        assert not paf.any()

    def test_invisible_endpoint_ignored(self) -> None:
        paf = render_paf([_pose({1: (10, 20)})], H, W)
        assert not paf.any()


class TestWeights:
    @pytest.mark.parametrize("value,expected", [(0.0, 1.0), (1.0, 2.0), (0.4, 1.4)])
    def test_jhm_weight(self, value: float, expected: float) -> None:
        assert jhm_weight_map(np.array([value]), LossWeights())[0] == pytest.approx(expected)

    def test_paf_weight_of_unit_vector(self) -> None:
        l_gt = np.zeros((1, 1, 2, NUM_LIMBS))
        l_gt[0, 0, :, 0] = (0.6, 0.8)
        alpha = paf_weight_map(l_gt, LossWeights())
        assert alpha.shape == (1, 1, 1, NUM_LIMBS)
        assert alpha[0, 0, 0, 0] == pytest.approx(1.0)
        assert alpha[0, 0, 0, 1] == pytest.approx(0.7)

    def test_negative_weight_rejected(self) -> None:
        with pytest.raises(ValueError):
            LossWeights(beta1=-0.1)


class TestLosses:
    def test_equal_inputs_give_zero(self) -> None:
        s = np.random.default_rng(0).uniform(size=(4, 4, 14)).astype(np.float32)
        paf = np.random.default_rng(1).uniform(-1, 1, (4, 4, 2, 13)).astype(np.float32)
        assert jhm_loss(s, s).item() == 0.0
        assert paf_loss(paf, paf).item() == 0.0

    def test_single_element_jhm(self) -> None:
        assert jhm_loss(np.array([1.0]), np.array([0.0])).item() == pytest.approx(2.0)

    def test_unit_vector_paf(self) -> None:
        l_i = np.zeros((1, 1, 2, 1))
        l_i[0, 0, 0, 0] = 1.0
        assert paf_loss(l_i, np.zeros_like(l_i)).item() == pytest.approx(1.0)

    def test_jhm_loop_oracle(self) -> None:
        rng = np.random.default_rng(2)
        s_i = rng.uniform(size=(3, 5, 14))
        s_r = rng.uniform(-0.5, 1.5, (3, 5, 14))
        expected = 0.0
        for idx in np.ndindex(s_i.shape):
            expected += (abs(s_i[idx]) + 1.0) * (s_i[idx] - s_r[idx]) ** 2
        assert jhm_loss(s_i, s_r).item() == pytest.approx(expected, rel=1e-4)

    def test_paf_loop_oracle(self) -> None:
        rng = np.random.default_rng(3)
        l_i = rng.uniform(-1, 1, (3, 4, 2, 13))
        l_r = rng.uniform(-1, 1, (3, 4, 2, 13))
        expected = 0.0
        for h in range(3):
            for w in range(4):
                for c in range(13):
                    alpha = 0.3 * np.hypot(l_i[h, w, 0, c], l_i[h, w, 1, c]) + 0.7
                    diff = l_i[h, w, :, c] - l_r[h, w, :, c]
                    expected += alpha * float(diff @ diff)
        assert paf_loss(l_i, l_r).item() == pytest.approx(expected, rel=1e-4)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ValueError):
            jhm_loss(np.zeros((2, 2, 14)), np.zeros((2, 3, 14)))
        with pytest.raises(ValueError):
            paf_loss(np.zeros((2, 2, 2, 13)), np.zeros((2, 2, 2, 12)))

    def test_losses_nonnegative(self) -> None:
        rng = np.random.default_rng(4)
        for _ in range(10):
            a, b = rng.normal(size=(2, 3, 3, 14))
            assert jhm_loss(a, b).item() >= 0.0

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients_wrt_predictions(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        s_i, s_r = rng.uniform(-1, 1, (2, 3, 3, 4))
        l_i, l_r = rng.uniform(-1, 1, (2, 3, 3, 2, 2))
        assert gradcheck(lambda t: jhm_loss(s_i, t), [s_r]) < 1e-3
        assert gradcheck(lambda t: paf_loss(l_i, t), [l_r]) < 1e-3


class TestTotalLoss:
    def _pair(self, seed: int) -> CrossModalPair:
        rng = np.random.default_rng(seed)
        return CrossModalPair(
            s_i=rng.uniform(size=(2, 4, 4, 14)),
            s_r=rng.uniform(size=(2, 4, 4, 14)),
            l_i=rng.uniform(-1, 1, (2, 4, 4, 2, 13)),
            l_r=rng.uniform(-1, 1, (2, 4, 4, 2, 13)),
        )

    def test_perfect_prediction(self) -> None:
        p = self._pair(0)
        perfect = CrossModalPair(p.s_i, p.s_i, p.l_i, p.l_i)
        assert total_cross_modal_loss([perfect]).item() == 0.0

    def test_identical_sequences_average(self) -> None:
        p = self._pair(1)
        one = total_cross_modal_loss([p]).item()
        assert total_cross_modal_loss([p, p]).item() == pytest.approx(one, rel=1e-6)

    def test_decomposes_per_frame(self) -> None:
        p = self._pair(2)
        per_frame = sum(
            jhm_loss(p.s_i[m], np.asarray(p.s_r)[m]).item()
            + paf_loss(p.l_i[m], np.asarray(p.l_r)[m]).item()
            for m in range(2)
        )
        assert total_cross_modal_loss([p]).item() == pytest.approx(per_frame, rel=1e-6)

    def test_accepts_tensor_predictions(self) -> None:
        p = self._pair(3)
        wrapped = CrossModalPair(p.s_i, Tensor(np.asarray(p.s_r)), p.l_i, Tensor(np.asarray(p.l_r)))
        assert total_cross_modal_loss([wrapped]).item() == pytest.approx(
            total_cross_modal_loss([p]).item()
        )

    def test_empty(self) -> None:
        with pytest.raises(ValueError):
            total_cross_modal_loss([])
