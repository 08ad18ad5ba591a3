"""Synthetic surveillance scenes: people, the visual oracle, and attacks.

A scene is a handful of people (zero to four) inside the room between the
Wi-Fi transmitter and receiver. Each person keeps one behaviour for the
whole timeline:

  - `sit`, `stand`: static poses with small keypoint jitter.
  - `walk`: the anchor moves along the depth axis at 0.5-1.5 m/s and turns
    around at the room edges; arms swing with the gait.
  - `wave`: a static stance with the right forearm oscillating at ~1 Hz.

Poses are analytic functions of time, so the channel simulator can sample
bodies at the CSI rate while the camera samples them at the frame rate.

Image geometry. People occupy separate lanes across the room width. The
anchor's image x is a linear function of its room x; keypoints are offset
from the anchor by a fixed body template scaled by `0.5 / depth`:

    u = 0.1 + 0.8 * (x - 0.5) / 5 + s * dx
    v = 0.97 - 0.2 * (y - 1.5) / 3 - s * z,      s = 0.5 / y

The visual oracle renders JHM/PAF tensors straight from these skeletons;
it plays the part a pose network would play on real video.

Attacks operate on `GopSample`s and never touch the RF frames:

  - playback swaps in another GOP's visual side,
  - tampering removes or inserts people and re-renders the visual side.

The abnormal objects of a forged frame are the people that are real but
not displayed plus those displayed but not real.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray

from securepose.pose_features import (
    DEFAULT_HEIGHT,
    DEFAULT_LIMB_WIDTH,
    DEFAULT_SIGMA,
    DEFAULT_WIDTH,
    LIMBS,
    NUM_KEYPOINTS,
    SkeletonPose,
    render_jhm,
    render_paf,
)

logger = logging.getLogger(__name__)

Behaviour = Literal["sit", "stand", "walk", "wave"]
BEHAVIOURS: tuple[Behaviour, ...] = ("sit", "stand", "walk", "wave")
STATIC_BEHAVIOURS = frozenset({"sit", "stand"})

MAX_PEOPLE = 4
LANE_CENTERS_X = (1.125, 2.375, 3.625, 4.875)
DEPTH_MIN = 1.5
DEPTH_MAX = 4.5
STATIC_JITTER = 0.002

# Standing template: (dx, z) in meters, dx positive toward image right.
STAND_TEMPLATE = np.array(
    [
        (0.00, 1.60),  # nose
        (0.00, 1.45),  # neck
        (-0.18, 1.42),  # r_shoulder
        (0.18, 1.42),  # l_shoulder
        (-0.22, 1.15),  # r_elbow
        (0.22, 1.15),  # l_elbow
        (-0.24, 0.90),  # r_wrist
        (0.24, 0.90),  # l_wrist
        (-0.10, 0.95),  # r_hip
        (0.10, 0.95),  # l_hip
        (-0.11, 0.50),  # r_knee
        (0.11, 0.50),  # l_knee
        (-0.11, 0.08),  # r_ankle
        (0.11, 0.08),  # l_ankle
    ],
    dtype=np.float64,
)

SIT_TEMPLATE = STAND_TEMPLATE.copy()
SIT_TEMPLATE[:10, 1] -= 0.42
SIT_TEMPLATE[10:12, 1] = 0.50
SIT_TEMPLATE[10:12, 0] *= 1.4


# ============================================================
# People + timelines
# ============================================================


@dataclass(frozen=True)
class PersonTrack:
    """One person's behaviour, parameterised so poses are closed-form in time."""

    person_id: int
    behaviour: Behaviour
    lane_x: float
    depth0: float
    speed: float = 0.0
    direction: float = 1.0
    wave_hz: float = 1.0
    phase: float = 0.0

    def anchor(self, times: NDArray[np.float64]) -> NDArray[np.float64]:
        """Ground-plane anchor `(n, 3)` at each time."""
        t = np.asarray(times, dtype=np.float64)
        depth = np.full(t.shape, self.depth0)
        if self.behaviour == "walk":
            span = DEPTH_MAX - DEPTH_MIN
            travel = np.mod(self.depth0 - DEPTH_MIN + self.direction * self.speed * t, 2 * span)
            depth = DEPTH_MIN + np.where(travel <= span, travel, 2 * span - travel)
        return np.stack([np.full(t.shape, self.lane_x), depth, np.zeros(t.shape)], axis=-1)

    def body_offsets(self, times: NDArray[np.float64]) -> NDArray[np.float64]:
        """Template offsets `(n, 14, 2)` as `(dx, z)` including behaviour motion."""
        t = np.asarray(times, dtype=np.float64)
        template = SIT_TEMPLATE if self.behaviour == "sit" else STAND_TEMPLATE
        out = np.broadcast_to(template, (*t.shape, NUM_KEYPOINTS, 2)).copy()
        if self.behaviour == "wave":
            angle = 0.4 * np.sin(2 * np.pi * self.wave_hz * t + self.phase)
            out[..., 4, :] = (-0.28, 1.38)
            out[..., 6, 0] = -0.28 - 0.25 * np.sin(angle)
            out[..., 6, 1] = 1.38 + 0.25 * np.cos(angle)
        elif self.behaviour == "walk":
            # Gait: one stride per 0.7 m; arms swing in antiphase.
            swing = 0.06 * np.sin(2 * np.pi * (self.speed / 0.7) * t + self.phase)
            out[..., 6, 1] += swing
            out[..., 7, 1] -= swing
            out[..., 12, 1] += np.clip(swing, 0.0, None)
            out[..., 13, 1] += np.clip(-swing, 0.0, None)
        return out

    def keypoints_3d(self, times: NDArray[np.float64]) -> NDArray[np.float64]:
        """Room-frame keypoints `(n, 14, 3)`."""
        anchor = self.anchor(times)
        offsets = self.body_offsets(times)
        out = np.empty((*offsets.shape[:-1], 3))
        out[..., 0] = anchor[..., None, 0] + offsets[..., 0]
        out[..., 1] = anchor[..., None, 1]
        out[..., 2] = offsets[..., 1]
        return out

    def image_keypoints(self, times: NDArray[np.float64]) -> NDArray[np.float64]:
        """Normalized image keypoints `(n, 14, 2)`."""
        anchor = self.anchor(times)
        offsets = self.body_offsets(times)
        return project_to_image(anchor, offsets)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "personId": self.person_id,
            "behaviour": self.behaviour,
            "laneX": self.lane_x,
            "depth0": self.depth0,
            "speed": self.speed,
            "direction": self.direction,
            "waveHz": self.wave_hz,
            "phase": self.phase,
        }


def project_to_image(
    anchor: NDArray[np.float64], offsets: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Map anchors `(n, 3)` plus body offsets `(n, 14, 2)` to image coordinates."""
    x, depth = anchor[..., 0:1], anchor[..., 1:2]
    scale = 0.5 / depth
    u = 0.1 + 0.8 * (x - 0.5) / 5.0 + scale * offsets[..., 0]
    v = 0.97 - 0.2 * (depth - DEPTH_MIN) / (DEPTH_MAX - DEPTH_MIN) - scale * offsets[..., 1]
    return np.stack([u, v], axis=-1)


@dataclass(frozen=True, eq=False)
class SceneTimeline:
    """Per-frame skeletons of a scene plus the tracks that generated them.

    Frame i is captured at `i / fps` seconds.
    """

    fps: float
    duration: float
    frames: tuple[tuple[SkeletonPose, ...], ...]
    tracks: tuple[PersonTrack, ...] = ()

    @property
    def num_people(self) -> int:
        return len(self.tracks)

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def frame_times(self) -> NDArray[np.float64]:
        return np.arange(self.num_frames, dtype=np.float64) / self.fps

    def anchors(self, times: NDArray[np.float64] | None = None) -> NDArray[np.float64]:
        """Anchor trajectories `(n, P, 3)`; defaults to the frame times."""
        t = self.frame_times() if times is None else np.asarray(times, dtype=np.float64)
        if not self.tracks:
            return np.zeros((t.shape[0], 0, 3))
        return np.stack([track.anchor(t) for track in self.tracks], axis=1)

    def limb_reflectors(
        self, times: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Limb midpoints `(n, P*13, 3)` and limb lengths `(n, P*13)`."""
        t = np.asarray(times, dtype=np.float64)
        if not self.tracks:
            return np.zeros((t.shape[0], 0, 3)), np.zeros((t.shape[0], 0))
        starts = np.array([a for a, _ in LIMBS])
        ends = np.array([b for _, b in LIMBS])
        mids, lengths = [], []
        for track in self.tracks:
            kp = track.keypoints_3d(t)
            a, b = kp[:, starts], kp[:, ends]
            mids.append(0.5 * (a + b))
            lengths.append(np.linalg.norm(b - a, axis=-1))
        return np.concatenate(mids, axis=1), np.concatenate(lengths, axis=1)


def _random_track(
    person_id: int, lane: int, behaviour: Behaviour, rng: np.random.Generator
) -> PersonTrack:
    return PersonTrack(
        person_id=person_id,
        behaviour=behaviour,
        lane_x=LANE_CENTERS_X[lane] + float(rng.uniform(-0.1, 0.1)),
        depth0=float(rng.uniform(DEPTH_MIN + 0.3, DEPTH_MAX - 0.3)),
        speed=float(rng.uniform(0.5, 1.5)) if behaviour == "walk" else 0.0,
        direction=float(rng.choice((-1.0, 1.0))),
        wave_hz=float(rng.uniform(0.8, 1.2)),
        phase=float(rng.uniform(0.0, 2 * np.pi)),
    )


def simulate_timeline(
    num_people: int,
    duration: float,
    fps: float = 7.5,
    seed: int = 0,
    *,
    behaviours: Sequence[Behaviour] | None = None,
) -> SceneTimeline:
    """Generate a seeded multi-person timeline.

    `behaviours` pins each person's behaviour; by default they are drawn
    uniformly so static and dynamic people mix.
    """
    if not 0 <= num_people <= MAX_PEOPLE:
        raise ValueError(f"num_people must be in [0, {MAX_PEOPLE}], got {num_people}")
    if duration <= 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    if fps <= 0:
        raise ValueError(f"fps must be > 0, got {fps}")
    if behaviours is not None and len(behaviours) != num_people:
        raise ValueError(f"{len(behaviours)} behaviours for {num_people} people")

    rng = np.random.default_rng(seed)
    lanes = rng.permutation(MAX_PEOPLE)[:num_people]
    tracks = []
    for pid, lane in enumerate(lanes):
        if behaviours is not None:
            behaviour = behaviours[pid]
        else:
            behaviour = BEHAVIOURS[int(rng.integers(len(BEHAVIOURS)))]
        tracks.append(_random_track(pid, int(lane), behaviour, rng))

    n_frames = max(1, int(round(duration * fps)))
    times = np.arange(n_frames, dtype=np.float64) / fps
    per_person = []
    for track in tracks:
        pts = track.image_keypoints(times)
        if track.behaviour in STATIC_BEHAVIOURS:
            pts = pts + rng.normal(0.0, STATIC_JITTER, size=pts.shape)
        per_person.append(pts)

    frames = tuple(
        tuple(
            SkeletonPose.from_points(track.person_id, pts[i])
            for track, pts in zip(tracks, per_person, strict=True)
        )
        for i in range(n_frames)
    )
    return SceneTimeline(fps=fps, duration=duration, frames=frames, tracks=tuple(tracks))


# ============================================================
# Visual oracle
# ============================================================


@dataclass(frozen=True)
class RenderSettings:
    height: int = DEFAULT_HEIGHT
    width: int = DEFAULT_WIDTH
    sigma: float = DEFAULT_SIGMA
    limb_width: float = DEFAULT_LIMB_WIDTH


def render_visual_oracle(
    poses: Sequence[SkeletonPose], settings: RenderSettings = RenderSettings()
) -> tuple[NDArray[np.float32], NDArray[np.float32]]:
    """Ground-truth JHM and PAF of one frame."""
    jhm = render_jhm(poses, settings.height, settings.width, settings.sigma)
    paf = render_paf(poses, settings.height, settings.width, settings.limb_width)
    return jhm, paf


def render_gop(
    frames: Sequence[Sequence[SkeletonPose]], settings: RenderSettings = RenderSettings()
) -> tuple[NDArray[np.float32], NDArray[np.float32]]:
    """Stacked `(M, H, W, 14)` JHMs and `(M, H, W, 2, 13)` PAFs."""
    rendered = [render_visual_oracle(poses, settings) for poses in frames]
    return (
        np.stack([jhm for jhm, _ in rendered]),
        np.stack([paf for _, paf in rendered]),
    )


# ============================================================
# GOP samples
# ============================================================

Label = Literal["authentic", "playback", "tampering"]
Frames = tuple[tuple[SkeletonPose, ...], ...]


def abnormal_objects(real: Frames, displayed: Frames) -> Frames:
    """Per frame: people real but not displayed, then people displayed but not real."""
    out = []
    for real_poses, shown in zip(real, displayed, strict=True):
        missing = tuple(p for p in real_poses if not any(p.same_as(q) for q in shown))
        extra = tuple(q for q in shown if not any(q.same_as(p) for p in real_poses))
        out.append(missing + extra)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class GopSample:
    """M synchronized video/RF frames of one GOP plus its ground truth.

    `rf_frames` is `(M, Nt*Nr, K, F)`. `jhm`/`paf` are the displayed
    video's oracle features; `visual_poses` are the skeletons they were
    rendered from and `real_poses` are the people physically present.
    """

    gop_id: str
    scene_id: int
    index: int
    label: Label
    rf_frames: NDArray[np.float32]
    jhm: NDArray[np.float32]
    paf: NDArray[np.float32]
    visual_poses: Frames
    real_poses: Frames
    abnormal_poses: Frames
    low_quality: bool = False
    environment: str = "office_a"
    attack: AttackSpec | None = None

    def __post_init__(self) -> None:
        m = self.rf_frames.shape[0]
        counts = {
            "jhm": self.jhm.shape[0],
            "paf": self.paf.shape[0],
            "visual_poses": len(self.visual_poses),
            "real_poses": len(self.real_poses),
            "abnormal_poses": len(self.abnormal_poses),
        }
        bad = {k: v for k, v in counts.items() if v != m}
        if bad:
            raise ValueError(f"GOP {self.gop_id}: {m} RF frames but {bad}")

    @property
    def num_frames(self) -> int:
        return int(self.rf_frames.shape[0])

    @property
    def num_people(self) -> int:
        return len(self.real_poses[0]) if self.real_poses else 0

    @property
    def forged(self) -> bool:
        return self.label != "authentic"

    @property
    def z(self) -> int:
        """Detector target: +1 forged, -1 authentic."""
        return 1 if self.forged else -1


def authentic_sample(
    gop_id: str,
    scene_id: int,
    index: int,
    rf_frames: NDArray[np.float32],
    frames: Frames,
    settings: RenderSettings = RenderSettings(),
    *,
    low_quality: bool = False,
    environment: str = "office_a",
) -> GopSample:
    jhm, paf = render_gop(frames, settings)
    empty: Frames = tuple(() for _ in frames)
    return GopSample(
        gop_id=gop_id,
        scene_id=scene_id,
        index=index,
        label="authentic",
        rf_frames=rf_frames,
        jhm=jhm,
        paf=paf,
        visual_poses=frames,
        real_poses=frames,
        abnormal_poses=empty,
        low_quality=low_quality,
        environment=environment,
    )


# ============================================================
# Attacks
# ============================================================

AttackKind = Literal["playback", "tamper-remove", "tamper-insert"]


@dataclass(frozen=True)
class AttackSpec:
    """What to forge: a GOP replaced by another, or people removed/inserted."""

    kind: AttackKind
    target: int
    source: int | None = None
    person_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "playback":
            if self.source is None:
                raise ValueError("playback attack needs a source GOP")
            if self.source == self.target:
                raise ValueError("playback source and target must differ")
        elif self.kind in ("tamper-remove", "tamper-insert"):
            if not self.person_ids:
                raise ValueError(f"{self.kind} attack needs at least one person id")
        else:
            raise ValueError(f"unknown attack kind: {self.kind!r}")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "target": self.target,
            "source": self.source,
            "personIds": list(self.person_ids),
        }


def inject_playback(samples: Sequence[GopSample], spec: AttackSpec) -> GopSample:
    """Replace the target GOP's visual side with the source GOP's.

    The RF frames stay the target's own.
    """
    if spec.kind != "playback" or spec.source is None:
        raise ValueError(f"inject_playback needs a playback spec, got {spec.kind!r}")
    for idx in (spec.target, spec.source):
        if not 0 <= idx < len(samples):
            raise IndexError(f"GOP index {idx} out of range for {len(samples)} samples")
    target, source = samples[spec.target], samples[spec.source]
    if source.num_frames != target.num_frames:
        raise ValueError(
            f"playback source has {source.num_frames} frames, target has {target.num_frames}"
        )
    return replace(
        target,
        label="playback",
        jhm=source.jhm,
        paf=source.paf,
        visual_poses=source.visual_poses,
        abnormal_poses=abnormal_objects(target.real_poses, source.visual_poses),
        attack=spec,
    )


def is_degenerate_playback(target: GopSample, source: GopSample) -> bool:
    """True when the replayed video is indistinguishable from the target's own."""
    return np.array_equal(target.jhm, source.jhm) and np.array_equal(target.paf, source.paf)


def inject_tampering(
    sample: GopSample,
    person_ids: Sequence[int],
    mode: Literal["remove", "insert"],
    donors: Sequence[Sequence[SkeletonPose]] | None = None,
    settings: RenderSettings = RenderSettings(),
) -> GopSample:
    """Remove people from, or insert donor people into, the displayed video.

    For `insert`, `donors` holds per-frame skeletons; those whose ids are in
    `person_ids` are added. The visual features are re-rendered.
    """
    ids = set(person_ids)
    if not ids:
        raise ValueError("tampering needs at least one person id")
    shown_ids = {p.person_id for poses in sample.visual_poses for p in poses}

    if mode == "remove":
        unknown = ids - shown_ids
        if unknown:
            raise ValueError(f"person ids not in GOP {sample.gop_id}: {sorted(unknown)}")
        visual: Frames = tuple(
            tuple(p for p in poses if p.person_id not in ids) for poses in sample.visual_poses
        )
        kind: AttackKind = "tamper-remove"
    elif mode == "insert":
        if donors is None or len(donors) != sample.num_frames:
            raise ValueError("insert needs donor skeletons for every frame")
        clash = ids & shown_ids
        if clash:
            raise ValueError(f"inserted ids already shown in GOP {sample.gop_id}: {sorted(clash)}")
        donor_ids = {p.person_id for poses in donors for p in poses}
        unknown = ids - donor_ids
        if unknown:
            raise ValueError(f"person ids not among the donors: {sorted(unknown)}")
        visual = tuple(
            tuple(poses) + tuple(p for p in donor if p.person_id in ids)
            for poses, donor in zip(sample.visual_poses, donors, strict=True)
        )
        kind = "tamper-insert"
    else:
        raise ValueError(f"unknown tampering mode: {mode!r}")

    jhm, paf = render_gop(visual, settings)
    return replace(
        sample,
        label="tampering",
        jhm=jhm,
        paf=paf,
        visual_poses=visual,
        abnormal_poses=abnormal_objects(sample.real_poses, visual),
        attack=AttackSpec(kind=kind, target=sample.index, person_ids=tuple(sorted(ids))),
    )


def relabel_donors(frames: Frames, first_id: int) -> tuple[Frames, tuple[int, ...]]:
    """Give donor skeletons fresh ids starting at `first_id`, consistently across frames."""
    old_ids = sorted({p.person_id for poses in frames for p in poses})
    mapping = {old: first_id + i for i, old in enumerate(old_ids)}
    renamed = tuple(
        tuple(
            SkeletonPose(person_id=mapping[p.person_id], keypoints=p.keypoints, visible=p.visible)
            for p in poses
        )
        for poses in frames
    )
    return renamed, tuple(mapping.values())
