"""Multipath Wi-Fi channel model driven by simulated human bodies.

The channel frequency response on link i at subcarrier frequency f is the
sum of a static part (line of sight plus furniture and walls) and a
dynamic part contributed by moving people:

    H(t, f, i) = (H_s(f, i) + sum_r a_r / d_r(t) * exp(-j 2 pi d_r(t) / lambda_f))
                 * exp(-j rho(t, f, i))

Every person contributes one reflector per limb, placed at the limb's
midpoint in 3D with an amplitude proportional to the limb's length. `d_r`
is the bistatic path length Tx antenna -> reflector -> Rx antenna. The NIC
reports power `|H|^2`, which is blind to the random phase offset `rho`.

Deployment geometry follows a desk-scale office: two 3-antenna NICs at 1 m
height, about 6 m apart, with 2.6 cm antenna spacing; people stand in the
ground-plane region between them (x in [0.5, 5.5] m, depth y in
[1.5, 4.5] m).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import NDArray

from securepose.csi_ingest import CsiTrace

if TYPE_CHECKING:
    from securepose.scene_sim import SceneTimeline

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

DEFAULT_CENTER_FREQ_HZ = 5.6e9
DEFAULT_BANDWIDTH_HZ = 20e6
DEFAULT_SUBCARRIERS = 30
ANTENNA_SPACING_M = 0.026
ANTENNA_HEIGHT_M = 1.0

# Guard time around the video span so alignment never runs off the trace.
TRACE_MARGIN_S = 0.5
CHUNK_SAMPLES = 256


def subcarrier_frequencies(
    center_hz: float = DEFAULT_CENTER_FREQ_HZ,
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ,
    count: int = DEFAULT_SUBCARRIERS,
) -> NDArray[np.float64]:
    """`count` evenly spaced bin centers across `bandwidth_hz`."""
    if count < 1:
        raise ValueError(f"subcarrier count must be >= 1, got {count}")
    spacing = bandwidth_hz / count
    return center_hz - bandwidth_hz / 2 + (np.arange(count) + 0.5) * spacing


def antenna_array(center: tuple[float, float, float], count: int = 3) -> NDArray[np.float64]:
    """Uniform linear array along the y axis, centred on `center`."""
    offsets = (np.arange(count) - (count - 1) / 2) * ANTENNA_SPACING_M
    out = np.tile(np.asarray(center, dtype=np.float64), (count, 1))
    out[:, 1] += offsets
    return out


def path_response(
    tx: NDArray[np.float64],
    rx: NDArray[np.float64],
    points: NDArray[np.float64],
    gains: NDArray[np.float64],
    freqs: NDArray[np.float64],
) -> NDArray[np.complex128]:
    """Summed single-bounce response of point reflectors.

    `tx` is `(Nt, 3)`, `rx` is `(Nr, 3)`, `points` is `(..., R, 3)` with
    per-reflector `gains` broadcastable to `(..., R)`. Returns
    `(..., Nt*Nr, K)`, links ordered transmitter-major.
    """
    d_tx = np.linalg.norm(points[..., :, None, :] - tx, axis=-1)  # (..., R, Nt)
    d_rx = np.linalg.norm(points[..., :, None, :] - rx, axis=-1)  # (..., R, Nr)
    d = d_tx[..., :, None] + d_rx[..., None, :]  # (..., R, Nt, Nr)
    d = d.reshape(*d.shape[:-2], tx.shape[0] * rx.shape[0])  # (..., R, L)
    amp = np.asarray(gains)[..., None] / d  # (..., R, L)
    phase = np.exp(-2j * np.pi * d[..., None] * freqs / SPEED_OF_LIGHT)  # (..., R, L, K)
    return np.einsum("...rl,...rlk->...lk", amp, phase)


def line_of_sight(
    tx: NDArray[np.float64], rx: NDArray[np.float64], freqs: NDArray[np.float64]
) -> NDArray[np.complex128]:
    d = np.linalg.norm(tx[:, None, :] - rx[None, :, :], axis=-1).reshape(-1)  # (L,)
    return (1.0 / d)[:, None] * np.exp(-2j * np.pi * d[:, None] * freqs / SPEED_OF_LIGHT)


# ============================================================
# Channel model + environment presets
# ============================================================


@dataclass(frozen=True, eq=False)
class ChannelModel:
    """Static geometry and noise process of one deployment.

    `static_cfr` is `(Nt*Nr, K)` complex. `reflectivity` scales every limb
    reflector: `a_r = reflectivity * limb_length`.
    """

    name: str
    tx: NDArray[np.float64]
    rx: NDArray[np.float64]
    freqs: NDArray[np.float64]
    static_cfr: NDArray[np.complex128]
    reflectivity: float = 0.25
    noise_fraction: float = 0.02
    impulse_rate: float = 0.005
    center_freq_hz: float = DEFAULT_CENTER_FREQ_HZ

    def __post_init__(self) -> None:
        if self.static_cfr.size == 0:
            raise ValueError("static CFR table is empty")
        expected = (self.tx.shape[0] * self.rx.shape[0], self.freqs.shape[0])
        if self.static_cfr.shape != expected:
            raise ValueError(f"static CFR shape {self.static_cfr.shape} != {expected}")
        if not np.all(np.abs(self.static_cfr) > 0):
            raise ValueError("static CFR must be nonzero on every link and subcarrier")
        if self.reflectivity < 0 or self.noise_fraction < 0 or not 0 <= self.impulse_rate < 1:
            raise ValueError("reflectivity, noise fraction and impulse rate must be nonnegative")

    @property
    def nt(self) -> int:
        return int(self.tx.shape[0])

    @property
    def nr(self) -> int:
        return int(self.rx.shape[0])

    @property
    def k(self) -> int:
        return int(self.freqs.shape[0])

    @property
    def wavelengths(self) -> NDArray[np.float64]:
        return SPEED_OF_LIGHT / self.freqs

    def mean_static_power(self) -> float:
        return float(np.mean(np.abs(self.static_cfr) ** 2))


@dataclass(frozen=True)
class Environment:
    """Room layout used to build a ChannelModel."""

    name: str
    tx_center: tuple[float, float, float]
    rx_center: tuple[float, float, float]
    static_points: tuple[tuple[float, float, float], ...] = ()
    static_gains: tuple[float, ...] = ()
    reflectivity: float = 0.25


ENVIRONMENTS: dict[str, Environment] = {
    "office_a": Environment(
        name="office_a",
        tx_center=(0.0, 3.0, ANTENNA_HEIGHT_M),
        rx_center=(6.0, 3.0, ANTENNA_HEIGHT_M),
        static_points=((3.0, 0.2, 1.5), (3.0, 5.8, 1.5), (1.5, 1.0, 0.8), (4.5, 5.2, 1.0)),
        static_gains=(0.5, 0.5, 0.3, 0.3),
    ),
    "office_b": Environment(
        name="office_b",
        tx_center=(0.0, 2.5, ANTENNA_HEIGHT_M),
        rx_center=(6.2, 3.5, ANTENNA_HEIGHT_M),
        static_points=(
            (2.0, 0.0, 1.5),
            (4.0, 6.5, 1.5),
            (6.8, 1.0, 1.2),
            (0.8, 5.0, 0.7),
            (3.5, 1.2, 0.9),
        ),
        static_gains=(0.45, 0.45, 0.35, 0.25, 0.2),
        reflectivity=0.22,
    ),
    "corridor": Environment(
        name="corridor",
        tx_center=(0.0, 3.0, ANTENNA_HEIGHT_M),
        rx_center=(6.0, 3.0, ANTENNA_HEIGHT_M),
        static_points=tuple((x, y, 1.5) for y in (1.0, 5.0) for x in (1.0, 3.0, 5.0)),
        static_gains=(0.6,) * 6,
        reflectivity=0.28,
    ),
}


def channel_for_environment(
    name: str,
    *,
    center_freq_hz: float = DEFAULT_CENTER_FREQ_HZ,
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ,
    subcarriers: int = DEFAULT_SUBCARRIERS,
    antennas: int = 3,
) -> ChannelModel:
    """Build the ChannelModel of a named preset (`office_a`, `office_b`, `corridor`)."""
    if name not in ENVIRONMENTS:
        raise ValueError(f"unknown environment {name!r}; choose from {', '.join(ENVIRONMENTS)}")
    env = ENVIRONMENTS[name]
    tx = antenna_array(env.tx_center, antennas)
    rx = antenna_array(env.rx_center, antennas)
    freqs = subcarrier_frequencies(center_freq_hz, bandwidth_hz, subcarriers)
    static = line_of_sight(tx, rx, freqs)
    if env.static_points:
        static = static + path_response(
            tx,
            rx,
            np.asarray(env.static_points, dtype=np.float64),
            np.asarray(env.static_gains, dtype=np.float64),
            freqs,
        )
    return ChannelModel(
        name=name,
        tx=tx,
        rx=rx,
        freqs=freqs,
        static_cfr=static,
        reflectivity=env.reflectivity,
        center_freq_hz=center_freq_hz,
    )


# ============================================================
# Synthesis
# ============================================================


def sample_times(
    start: float,
    stop: float,
    rate: float,
    rng: np.random.Generator,
    *,
    jitter: float = 0.2,
    drop: float = 0.02,
) -> NDArray[np.float64]:
    """Jittered packet arrival times covering `[start, stop]`.

    Each nominal slot is shifted by up to `jitter` of the interval and
    dropped with probability `drop`. The first and last slots are always
    kept unjittered so the span is exact.
    """
    if rate <= 0:
        raise ValueError(f"sampling rate must be > 0, got {rate}")
    interval = 1.0 / rate
    n = int(np.ceil((stop - start) * rate)) + 1
    t = start + np.arange(n) * interval
    t[1:-1] += rng.uniform(-jitter, jitter, size=max(n - 2, 0)) * interval
    keep = rng.random(n) >= drop
    keep[0] = keep[-1] = True
    return t[keep]


def dynamic_cfr(
    timeline: SceneTimeline, channel: ChannelModel, times: NDArray[np.float64]
) -> NDArray[np.complex128]:
    """Sum of limb-reflector responses, `(N, Nt*Nr, K)`."""
    out = np.zeros((times.shape[0], channel.nt * channel.nr, channel.k), dtype=np.complex128)
    if timeline.num_people == 0:
        return out
    for lo in range(0, times.shape[0], CHUNK_SAMPLES):
        chunk = times[lo : lo + CHUNK_SAMPLES]
        points, lengths = timeline.limb_reflectors(chunk)  # (n, R, 3), (n, R)
        out[lo : lo + chunk.shape[0]] = path_response(
            channel.tx, channel.rx, points, channel.reflectivity * lengths, channel.freqs
        )
    return out


def synthesize_csi(
    timeline: SceneTimeline,
    channel: ChannelModel,
    rate: float = 100.0,
    seed: int = 0,
    *,
    random_phase: bool = True,
    noise: bool = True,
    jitter: float = 0.2,
    drop: float = 0.02,
) -> CsiTrace:
    """Simulated CSI power trace covering the timeline plus a guard margin.

    Independent random streams drive timing, phase offsets and noise, so
    switching `random_phase` off changes nothing but the phase draws.
    """
    if rate <= 0:
        raise ValueError(f"sampling rate must be > 0, got {rate}")
    timing_seq, phase_seq, noise_seq = np.random.SeedSequence(seed).spawn(3)
    times = sample_times(
        -TRACE_MARGIN_S,
        timeline.duration + TRACE_MARGIN_S,
        rate,
        np.random.default_rng(timing_seq),
        jitter=jitter,
        drop=drop,
    )
    h = channel.static_cfr[None, :, :] + dynamic_cfr(timeline, channel, times)
    phase_rng = np.random.default_rng(phase_seq)
    rho = phase_rng.uniform(0.0, 2.0 * np.pi, size=h.shape)
    if random_phase:
        h = h * np.exp(-1j * rho)
    power = np.abs(h) ** 2

    if noise:
        noise_rng = np.random.default_rng(noise_seq)
        base = channel.mean_static_power()
        power = power + noise_rng.normal(0.0, channel.noise_fraction * base, size=power.shape)
        spikes = noise_rng.random(power.shape) < channel.impulse_rate
        magnitude = noise_rng.uniform(0.2, 0.5, size=power.shape) * base
        sign = np.where(noise_rng.random(power.shape) < 0.5, -1.0, 1.0)
        power = np.where(spikes, power + sign * magnitude, power)
        power = np.clip(power, 0.0, None)

    logger.debug(
        "synthesized %d CSI samples for %d people in %s",
        times.shape[0],
        timeline.num_people,
        channel.name,
    )
    return CsiTrace(
        nt=channel.nt,
        nr=channel.nr,
        k=channel.k,
        timestamps=times,
        power=power,
        nominal_rate_hz=rate,
    )
