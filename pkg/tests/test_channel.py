"""Tests for channel.py — the multipath channel model and CSI synthesis."""

from __future__ import annotations

import numpy as np
import pytest

from securepose.channel import (
    ENVIRONMENTS,
    SPEED_OF_LIGHT,
    TRACE_MARGIN_S,
    ChannelModel,
    antenna_array,
    channel_for_environment,
    path_response,
    sample_times,
    subcarrier_frequencies,
    synthesize_csi,
)
from securepose.scene_sim import simulate_timeline


@pytest.fixture(scope="module")
def office() -> ChannelModel:
    return channel_for_environment("office_a")


class TestGeometry:
    def test_subcarriers_span_band(self) -> None:
        freqs = subcarrier_frequencies(5.6e9, 20e6, 30)
        assert freqs.shape == (30,)
        np.testing.assert_allclose(np.diff(freqs), 20e6 / 30)
        assert freqs.mean() == pytest.approx(5.6e9)
        assert freqs[0] > 5.6e9 - 10e6
        assert freqs[-1] < 5.6e9 + 10e6

    def test_antenna_array_spacing(self) -> None:
        arr = antenna_array((1.0, 2.0, 1.0), 3)
        np.testing.assert_allclose(arr[:, 1], [1.974, 2.0, 2.026])
        np.testing.assert_allclose(arr[:, 0], 1.0)

    def test_single_reflector_closed_form(self) -> None:
        tx = np.array([[0.0, 0.0, 1.0]])
        rx = np.array([[4.0, 0.0, 1.0]])
        point = np.array([[2.0, 1.5, 1.0]])
        freqs = np.array([5.59e9, 5.6e9])
        h = path_response(tx, rx, point, np.array([0.3]), freqs)
        d = 2 * np.hypot(2.0, 1.5)
        expected = 0.3 / d * np.exp(-2j * np.pi * d * freqs / SPEED_OF_LIGHT)
        assert h.shape == (1, 2)
        np.testing.assert_allclose(h[0], expected, rtol=1e-12)

    def test_power_oscillates_with_path_length(self) -> None:
        # Moving a reflector so the bistatic path grows by one wavelength
        # returns the interference term to its starting phase.
        tx = np.array([[0.0, 0.0, 1.0]])
        rx = np.array([[0.0, 0.0, 1.0]])
        freqs = np.array([5.6e9])
        lam = SPEED_OF_LIGHT / freqs[0]
        static = np.array([[1.0 + 0.0j]])
        depths = 2.0 + np.array([0.0, lam / 4, lam / 2])
        points = np.stack([np.array([[0.0, y, 1.0]]) for y in depths])
        h = static + path_response(tx, rx, points, np.array([0.2]), freqs)
        power = np.abs(h[:, 0, 0]) ** 2
        amp = 0.2 / (2 * depths)
        expected = np.abs(1.0 + amp * np.exp(-2j * np.pi * 2 * depths / lam)) ** 2
        np.testing.assert_allclose(power, expected, rtol=1e-9)
        # Round trip of lam/2 in depth is one full wavelength of path.
        assert power[0] == pytest.approx(power[2], rel=1e-2)
        assert abs(power[1] - power[0]) > 0.1


class TestEnvironments:
    @pytest.mark.parametrize("name", sorted(ENVIRONMENTS))
    def test_presets_build(self, name: str) -> None:
        channel = channel_for_environment(name)
        assert (channel.nt, channel.nr, channel.k) == (3, 3, 30)
        assert channel.static_cfr.shape == (9, 30)
        assert np.all(np.abs(channel.static_cfr) > 0)

    def test_unknown_environment(self) -> None:
        with pytest.raises(ValueError, match="unknown environment"):
            channel_for_environment("basement")

    def test_empty_static_cfr_rejected(self, office: ChannelModel) -> None:
        with pytest.raises(ValueError):
            ChannelModel(
                name="empty",
                tx=office.tx[:0],
                rx=office.rx,
                freqs=office.freqs,
                static_cfr=np.zeros((0, 30), dtype=complex),
            )


class TestSampleTimes:
    def test_covers_span_and_increases(self) -> None:
        rng = np.random.default_rng(0)
        t = sample_times(-0.5, 3.0, 100.0, rng, jitter=0.2, drop=0.02)
        assert t[0] == -0.5
        assert t[-1] >= 3.0 - 1e-9
        assert np.all(np.diff(t) > 0)
        assert 0.9 * 351 < len(t) <= 351

    def test_bad_rate(self) -> None:
        with pytest.raises(ValueError):
            sample_times(0.0, 1.0, 0.0, np.random.default_rng(0))


class TestSynthesize:
    def test_phase_invariance(self, office: ChannelModel) -> None:
        timeline = simulate_timeline(2, 2.0, seed=3)
        with_phase = synthesize_csi(timeline, office, seed=11, random_phase=True)
        without = synthesize_csi(timeline, office, seed=11, random_phase=False)
        np.testing.assert_array_equal(with_phase.timestamps, without.timestamps)
        np.testing.assert_allclose(with_phase.power, without.power, atol=1e-9, rtol=0)

    def test_empty_scene_is_static(self, office: ChannelModel) -> None:
        timeline = simulate_timeline(0, 2.0, seed=0)
        trace = synthesize_csi(timeline, office, seed=0, noise=False)
        expected = np.abs(office.static_cfr) ** 2
        np.testing.assert_allclose(trace.power, np.broadcast_to(expected, trace.power.shape))

    def test_empty_scene_noise_level(self, office: ChannelModel) -> None:
        timeline = simulate_timeline(0, 4.0, seed=0)
        trace = synthesize_csi(timeline, office, seed=1)
        std = np.median(trace.power.std(axis=0))
        base = office.mean_static_power()
        assert std < 0.1 * base

    def test_person_adds_time_variance(self, office: ChannelModel) -> None:
        empty = synthesize_csi(simulate_timeline(0, 3.0, seed=5), office, seed=5, noise=False)
        walker = simulate_timeline(1, 3.0, seed=5, behaviours=["walk"])
        busy = synthesize_csi(walker, office, seed=5, noise=False)
        assert np.max(busy.power.var(axis=0) - empty.power.var(axis=0)) > 0

    def test_trace_covers_timeline_with_margin(self, office: ChannelModel) -> None:
        timeline = simulate_timeline(1, 2.0, seed=2)
        trace = synthesize_csi(timeline, office, seed=2)
        assert trace.timestamps[0] == pytest.approx(-TRACE_MARGIN_S)
        assert trace.timestamps[-1] >= timeline.duration + TRACE_MARGIN_S - 1e-9
        assert trace.power.shape[1:] == (9, 30)
        assert np.all(trace.power >= 0)

    def test_deterministic(self, office: ChannelModel) -> None:
        timeline = simulate_timeline(3, 1.5, seed=9)
        a = synthesize_csi(timeline, office, seed=4)
        b = synthesize_csi(timeline, office, seed=4)
        np.testing.assert_array_equal(a.power, b.power)
        np.testing.assert_array_equal(a.timestamps, b.timestamps)

    def test_bad_rate(self, office: ChannelModel) -> None:
        with pytest.raises(ValueError):
            synthesize_csi(simulate_timeline(0, 1.0), office, rate=0.0)
