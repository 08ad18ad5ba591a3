"""CSI power traces: parsing, frame alignment, denoising, RF-frame assembly.

The camera stamps video frames on its own clock and the Wi-Fi NIC reports
CSI on another, with jitter and dropped packets. For each video frame m
we resample F measurements uniformly inside `(t_{m-1}, t_m]` by linear
interpolation between the two bracketing CSI samples:

    A~ = A^{n-1} + eta * (A^n - A^{n-1}),   eta = (t - t_{n-1}) / (t_n - t_{n-1})

so every frame gets exactly F measurements no matter how the packets
arrived. The aligned series for every (link, subcarrier) pair is then
low-pass filtered with a causal Butterworth filter and stacked into one
`(Nt*Nr, K, F)` RF frame per video frame.

Trace file format (UTF-8 CSV):

    t,p_1,...,p_{Nt*Nr*K}
    0.0103,0.0241,...

`p` is flattened link-major (`p_{i*K + k + 1}` is link i, subcarrier k).
A JSON sidecar `<name>.meta.json` carries `nt`, `nr`, `k`,
`nominal_rate_hz` and `center_freq_hz`.

Sampling-rate caveat: the aligned stream runs at `F * fps` (67.5 Hz for
F=9 at 7.5 fps), so a 60 Hz cutoff is above Nyquist. The effective cutoff
is clamped to `0.9 * fs / 2`.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from scipy import signal

from securepose.tensor_file import atomic_write_text

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 4
DEFAULT_CUTOFF_HZ = 60.0
CUTOFF_NYQUIST_FRACTION = 0.9
# Interpolation across a gap longer than this many nominal intervals flags the GOP.
LOW_QUALITY_GAP_INTERVALS = 5.0


class TraceFormatError(ValueError):
    """The trace file or its sidecar does not match the expected format."""


class CoverageError(ValueError):
    """A resampling time falls outside the span of the trace."""


# ============================================================
# Types
# ============================================================


@dataclass(frozen=True, eq=False)
class CsiTrace:
    """Timestamped CSI power measurements.

    `timestamps` is `(N,)` seconds, strictly increasing. `power` is
    `(N, Nt*Nr, K)`, nonnegative.
    """

    nt: int
    nr: int
    k: int
    timestamps: NDArray[np.float64]
    power: NDArray[np.float64]
    nominal_rate_hz: float = 100.0

    def __post_init__(self) -> None:
        if self.nt < 1 or self.nr < 1 or self.k < 1:
            raise ValueError(
                f"antenna/subcarrier counts must be >= 1 ({self.nt}, {self.nr}, {self.k})"
            )
        n = self.timestamps.shape[0]
        if self.timestamps.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if self.power.shape != (n, self.links, self.k):
            raise ValueError(
                f"power shape {self.power.shape} != ({n}, {self.links}, {self.k})"
            )
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            bad = int(np.flatnonzero(np.diff(self.timestamps) <= 0)[0]) + 1
            raise ValueError(f"timestamps not strictly increasing at sample {bad}")

    @property
    def links(self) -> int:
        return self.nt * self.nr

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])


@dataclass(frozen=True)
class FrameClock:
    """Timestamps of one GOP's video frames.

    `timestamps` holds `t_0 .. t_M`: `t_0` closes the previous frame, so the
    clock describes M frame intervals.
    """

    timestamps: tuple[float, ...]
    fps: float

    def __post_init__(self) -> None:
        if len(self.timestamps) < 2:
            raise ValueError("a frame clock needs t_0 and at least one frame timestamp")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:], strict=False)):
            raise ValueError("frame timestamps must be strictly increasing")
        if self.fps <= 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")

    @property
    def num_frames(self) -> int:
        return len(self.timestamps) - 1


def frame_clocks(start: float, fps: float, gop_size: int, num_gops: int) -> list[FrameClock]:
    """Back-to-back GOP clocks at a nominal frame rate."""
    clocks = []
    for g in range(num_gops):
        first = g * gop_size
        stamps = tuple(start + (first + m) / fps for m in range(gop_size + 1))
        clocks.append(FrameClock(timestamps=stamps, fps=fps))
    return clocks


@dataclass(frozen=True, eq=False)
class AlignedSamples:
    """`samples` is `(M, F, Nt*Nr, K)`; `low_quality` flags long packet gaps."""

    samples: NDArray[np.float64]
    low_quality: bool


# ============================================================
# Trace file I/O
# ============================================================


def _meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def write_csi_trace(path: Path, trace: CsiTrace, *, center_freq_hz: float = 5.6e9) -> Path:
    """Write the CSV trace and its meta sidecar atomically.

    Values are written with `repr`, so parsing reproduces every float bit for bit.
    """
    path = Path(path)
    width = trace.links * trace.k
    header = ["t"] + [f"p_{i + 1}" for i in range(width)]
    flat = trace.power.reshape(len(trace), width)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for t, row in zip(trace.timestamps, flat, strict=True):
        writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    atomic_write_text(path, buf.getvalue())
    meta = {
        "nt": trace.nt,
        "nr": trace.nr,
        "k": trace.k,
        "nominal_rate_hz": trace.nominal_rate_hz,
        "center_freq_hz": center_freq_hz,
    }
    atomic_write_text(_meta_path(path), json.dumps(meta, indent=2) + "\n")
    return path


def read_trace_meta(path: Path) -> dict[str, float]:
    meta_path = _meta_path(Path(path))
    if not meta_path.exists():
        raise FileNotFoundError(f"trace sidecar not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise TraceFormatError(f"{meta_path}: invalid JSON ({e})") from e
    required = ("nt", "nr", "k", "nominal_rate_hz", "center_freq_hz")
    missing = [key for key in required if key not in meta]
    if missing:
        raise TraceFormatError(f"{meta_path}: missing fields {', '.join(missing)}")
    return meta


def parse_csi_trace(path: Path) -> CsiTrace:
    """Parse and validate a trace CSV plus its meta sidecar.

    Errors name the offending 1-based line of the CSV.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trace not found: {path}")
    meta = read_trace_meta(path)
    nt, nr, k = int(meta["nt"]), int(meta["nr"]), int(meta["k"])
    width = nt * nr * k
    times: list[float] = []
    rows: list[list[float]] = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceFormatError(f"{path}:1: empty file")
        if len(header) != width + 1 or header[0].strip() != "t":
            raise TraceFormatError(
                f"{path}:1: header has {len(header)} columns, expected t + {width} powers"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise TraceFormatError(
                    f"{path}:{line_no}: {len(row)} columns, expected {width + 1}"
                )
            try:
                values = [float(v) for v in row]
            except ValueError as e:
                raise TraceFormatError(f"{path}:{line_no}: malformed number ({e})") from e
            if not all(np.isfinite(values)):
                raise TraceFormatError(f"{path}:{line_no}: non-finite value")
            if any(v < 0 for v in values[1:]):
                raise TraceFormatError(f"{path}:{line_no}: negative power")
            if times and values[0] <= times[-1]:
                raise TraceFormatError(
                    f"{path}:{line_no}: timestamp {values[0]!r} not after {times[-1]!r}"
                )
            times.append(values[0])
            rows.append(values[1:])
    power = np.asarray(rows, dtype=np.float64).reshape(len(rows), nt * nr, k)
    return CsiTrace(
        nt=nt,
        nr=nr,
        k=k,
        timestamps=np.asarray(times, dtype=np.float64),
        power=power,
        nominal_rate_hz=float(meta["nominal_rate_hz"]),
    )


# ============================================================
# Alignment
# ============================================================


def interpolate_at(trace: CsiTrace, t: float) -> tuple[NDArray[np.float64], float]:
    """Linear interpolation of the power matrix at time `t`.

    Returns the interpolated `(Nt*Nr, K)` matrix and the width of the
    bracketing gap in seconds.
    """
    ts = trace.timestamps
    if len(ts) == 0 or t < ts[0] or t > ts[-1]:
        span = (float(ts[0]), float(ts[-1])) if len(ts) else (float("nan"), float("nan"))
        raise CoverageError(f"time {t!r} outside trace span {span}")
    lo = int(np.searchsorted(ts, t, side="right")) - 1
    if ts[lo] == t or lo == len(ts) - 1:
        return trace.power[lo].copy(), 0.0
    hi = lo + 1
    eta = (t - ts[lo]) / (ts[hi] - ts[lo])
    a_prev, a_next = trace.power[lo], trace.power[hi]
    return a_prev + eta * (a_next - a_prev), float(ts[hi] - ts[lo])


def align(trace: CsiTrace, clock: FrameClock, f: int) -> AlignedSamples:
    """F linearly interpolated measurements per video frame."""
    if f < 1:
        raise ValueError(f"F must be >= 1, got {f}")
    m = clock.num_frames
    out = np.empty((m, f, trace.links, trace.k), dtype=np.float64)
    widest = 0.0
    for i in range(m):
        t_prev, t_cur = clock.timestamps[i], clock.timestamps[i + 1]
        dt = (t_cur - t_prev) / f
        for j in range(f):
            value, gap = interpolate_at(trace, t_prev + (j + 1) * dt)
            out[i, j] = value
            widest = max(widest, gap)
    low_quality = widest > LOW_QUALITY_GAP_INTERVALS / trace.nominal_rate_hz
    if low_quality:
        logger.warning(
            "GOP starting at %.3fs interpolates across a %.3fs gap; flagged low quality",
            clock.timestamps[0],
            widest,
        )
    return AlignedSamples(samples=out, low_quality=low_quality)


# ============================================================
# Denoising
# ============================================================


def effective_cutoff(fs: float, cutoff: float) -> float:
    return min(cutoff, CUTOFF_NYQUIST_FRACTION * fs / 2.0)


def butterworth_sos(fs: float, cutoff: float, order: int = DEFAULT_ORDER) -> NDArray[np.float64]:
    """Second-order sections of a digital low-pass Butterworth (bilinear transform)."""
    if fs <= 0:
        raise ValueError(f"sampling rate must be > 0, got {fs}")
    if order < 1:
        raise ValueError(f"filter order must be >= 1, got {order}")
    if cutoff <= 0:
        raise ValueError(f"cutoff must be > 0, got {cutoff}")
    wn = effective_cutoff(fs, cutoff)
    return np.asarray(signal.butter(order, wn, btype="low", fs=fs, output="sos"))


def butterworth_lowpass(
    series: NDArray[np.floating],
    fs: float,
    cutoff: float = DEFAULT_CUTOFF_HZ,
    order: int = DEFAULT_ORDER,
    *,
    axis: int = -1,
    initial: Literal["zero", "steady"] = "zero",
) -> NDArray[np.float64]:
    """Causal Butterworth low-pass along `axis`.

    `initial="zero"` starts from rest (the plain difference equation);
    `initial="steady"` primes every section as if the first sample had been
    held forever, which removes the start-up transient on a live stream
    without breaking linearity.
    """
    sos = butterworth_sos(fs, cutoff, order)
    x = np.asarray(series, dtype=np.float64)
    if x.shape[axis] == 0:
        return x.copy()
    if initial == "zero":
        return np.asarray(signal.sosfilt(sos, x, axis=axis))
    if initial != "steady":
        raise ValueError(f"unknown initial state: {initial!r}")
    zi = signal.sosfilt_zi(sos)  # (sections, 2), unit-step steady state
    x_last = np.moveaxis(x, axis, -1)
    flat = x_last.reshape(-1, x_last.shape[-1])
    state = zi[:, None, :] * flat[None, :, 0, None]
    y, _ = signal.sosfilt(sos, flat, axis=-1, zi=state)
    return np.moveaxis(np.asarray(y).reshape(x_last.shape), -1, axis)


# ============================================================
# Assembly
# ============================================================


def assemble_rf_frames(
    samples: NDArray[np.floating], clock: FrameClock | None = None
) -> NDArray[np.float32]:
    """Stack each frame's F samples on the last axis.

    `samples` is `(M, F, Nt*Nr, K)`; the result is `(M, Nt*Nr, K, F)`.
    """
    arr = np.asarray(samples)
    if arr.ndim != 4:
        raise ValueError(f"expected (M, F, links, K) samples, got shape {arr.shape}")
    if clock is not None and arr.shape[0] != clock.num_frames:
        raise ValueError(f"{arr.shape[0]} frames of samples for a {clock.num_frames}-frame clock")
    return np.ascontiguousarray(np.moveaxis(arr, 1, -1)).astype(np.float32)


@dataclass(frozen=True, eq=False)
class PreprocessedGop:
    rf_frames: NDArray[np.float32]
    low_quality: bool


def preprocess_gop(
    trace: CsiTrace,
    clock: FrameClock,
    f: int = 9,
    cutoff_hz: float = DEFAULT_CUTOFF_HZ,
    order: int = DEFAULT_ORDER,
) -> PreprocessedGop:
    """Align, denoise per (link, subcarrier) series, and assemble RF frames."""
    aligned = align(trace, clock, f)
    m = clock.num_frames
    series = aligned.samples.reshape(m * f, trace.links, trace.k)
    fs = f * clock.fps
    denoised = butterworth_lowpass(series, fs, cutoff_hz, order, axis=0, initial="steady")
    frames = assemble_rf_frames(denoised.reshape(m, f, trace.links, trace.k), clock)
    return PreprocessedGop(rf_frames=frames, low_quality=aligned.low_quality)


def preprocess_trace(
    trace: CsiTrace,
    clocks: Sequence[FrameClock],
    f: int = 9,
    cutoff_hz: float = DEFAULT_CUTOFF_HZ,
    order: int = DEFAULT_ORDER,
) -> list[PreprocessedGop]:
    return [preprocess_gop(trace, clock, f, cutoff_hz, order) for clock in clocks]
