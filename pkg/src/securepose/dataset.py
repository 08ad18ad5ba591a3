"""Synthetic dataset generation and the on-disk dataset layout.

`build_dataset` turns a `PipelineConfig` into a directory:

    <out>/
      config.json              effective configuration
      manifest.json            one entry per GOP (written last)
      traces/scene_0003.csv    simulated CSI trace (+ .meta.json)
      rf/gop_00031.spt         RF frames, tensor "rf"
      visual/gop_00031.spt     displayed video's JHM/PAF, tensors "jhm", "paf"
      skeletons/gop_00031_skeletons.json    shown and real skeletons per frame
      abnormal/gop_00031_abnormal.json      ground-truth abnormal skeletons per frame

Each scene is simulated, its CSI trace is written to disk and parsed back
(so every GOP goes through the same ingest path real traces would), cut
into back-to-back GOPs and preprocessed. Scenes are then split into
train / val / test, and inside each split a `forged_fraction` of the GOPs
is attacked, half by playback and half by tampering.

Scenes are independent, so they are generated on a thread pool; results
are consumed in scene order and every random draw comes from a seed
derived from `(seed, scene)` or `(seed, gop)`, which keeps the output
byte-identical for any worker count.
"""

from __future__ import annotations

import concurrent.futures
import json
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np

from securepose.channel import channel_for_environment, synthesize_csi
from securepose.config import PipelineConfig, config_to_json_dict, write_effective_config
from securepose.csi_ingest import frame_clocks, parse_csi_trace, preprocess_trace, write_csi_trace
from securepose.pose_features import SkeletonPose
from securepose.scene_sim import (
    MAX_PEOPLE,
    AttackSpec,
    Frames,
    GopSample,
    Label,
    RenderSettings,
    authentic_sample,
    inject_playback,
    inject_tampering,
    is_degenerate_playback,
    relabel_donors,
    render_gop,
    simulate_timeline,
)
from securepose.tensor_file import atomic_write_text, load_tensors, save_tensors

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 2
MANIFEST_NAME = "manifest.json"

Split = Literal["train", "val", "test"]
SPLITS: tuple[Split, ...] = ("train", "val", "test")

# Seed-sequence tags keep the per-scene and per-GOP streams apart.
_SCENE_STREAM = 1
_ATTACK_STREAM = 2
_SPLIT_STREAM = 3


def render_settings(cfg: PipelineConfig) -> RenderSettings:
    sim = cfg.sim
    return RenderSettings(
        height=sim.height, width=sim.width, sigma=sim.sigma, limb_width=sim.limb_width
    )


# ============================================================
# Scenes
# ============================================================


@dataclass(frozen=True)
class ScenePlan:
    scene_id: int
    first_gop: int
    num_gops: int
    num_people: int
    environment: str
    split: Split


def plan_scenes(cfg: PipelineConfig) -> list[ScenePlan]:
    """Scene sizes, people counts, environments and scene-level splits."""
    sim = cfg.sim
    n_scenes = math.ceil(sim.num_gops / sim.gops_per_scene)
    rng = np.random.default_rng([cfg.seed, _SPLIT_STREAM])
    order = rng.permutation(n_scenes)
    n_test = round(sim.test_fraction * n_scenes)
    n_val = round(sim.val_fraction * n_scenes)
    split_of: dict[int, Split] = {}
    for rank, scene in enumerate(order.tolist()):
        split_of[scene] = "test" if rank < n_test else "val" if rank < n_test + n_val else "train"

    plans = []
    for s in range(n_scenes):
        scene_rng = np.random.default_rng([cfg.seed, _SCENE_STREAM, s])
        people = sim.people if sim.people is not None else int(scene_rng.integers(MAX_PEOPLE + 1))
        first = s * sim.gops_per_scene
        plans.append(
            ScenePlan(
                scene_id=s,
                first_gop=first,
                num_gops=min(sim.gops_per_scene, sim.num_gops - first),
                num_people=people,
                environment=sim.environments[s % len(sim.environments)],
                split=split_of[s],
            )
        )
    return plans


def gop_id(index: int) -> str:
    return f"gop_{index:05d}"


def trace_path(out_dir: Path, scene_id: int) -> Path:
    return Path(out_dir) / "traces" / f"scene_{scene_id:04d}.csv"


def simulate_scene(cfg: PipelineConfig, plan: ScenePlan, out_dir: Path) -> list[GopSample]:
    """Authentic GOPs of one scene, via a trace written to and parsed from disk."""
    sim, pre = cfg.sim, cfg.preprocess
    m = sim.gop_size
    seed_seq = np.random.SeedSequence([cfg.seed, _SCENE_STREAM, plan.scene_id])
    seed = int(seed_seq.generate_state(1)[0])
    timeline = simulate_timeline(plan.num_people, plan.num_gops * m / sim.fps, sim.fps, seed)
    channel = channel_for_environment(plan.environment)
    trace = synthesize_csi(
        timeline,
        channel,
        sim.csi_rate_hz,
        seed,
        jitter=sim.timestamp_jitter,
        drop=sim.packet_drop,
    )
    path = write_csi_trace(
        trace_path(out_dir, plan.scene_id), trace, center_freq_hz=channel.center_freq_hz
    )
    trace = parse_csi_trace(path)

    # Frame i of the timeline is captured at i / fps, so each GOP's clock
    # opens one frame interval before its first frame.
    clocks = frame_clocks(-1.0 / sim.fps, sim.fps, m, plan.num_gops)
    gops = preprocess_trace(trace, clocks, pre.f, pre.cutoff_hz, pre.order)
    settings = render_settings(cfg)
    samples = []
    for g, gop in enumerate(gops):
        index = plan.first_gop + g
        frames: Frames = timeline.frames[g * m : (g + 1) * m]
        samples.append(
            authentic_sample(
                gop_id(index),
                plan.scene_id,
                index,
                gop.rf_frames,
                frames,
                settings,
                low_quality=gop.low_quality,
                environment=plan.environment,
            )
        )
    logger.debug(
        "scene %d: %d people in %s, %d GOPs",
        plan.scene_id,
        plan.num_people,
        plan.environment,
        plan.num_gops,
    )
    return samples


# ============================================================
# Attacks
# ============================================================


def _insert_donors(cfg: PipelineConfig, rng: np.random.Generator, frames: int) -> Frames:
    count = int(rng.integers(1, MAX_PEOPLE + 1))
    donor = simulate_timeline(count, frames / cfg.sim.fps, cfg.sim.fps, int(rng.integers(2**31)))
    renamed, _ = relabel_donors(donor.frames[:frames], first_id=MAX_PEOPLE)
    return renamed


def tamper(cfg: PipelineConfig, sample: GopSample, rng: np.random.Generator) -> GopSample:
    """Remove a random non-empty subset of the shown people, or insert donors into an empty GOP."""
    settings = render_settings(cfg)
    shown = sorted({p.person_id for poses in sample.visual_poses for p in poses})
    if shown:
        count = int(rng.integers(1, len(shown) + 1))
        ids = sorted(rng.choice(shown, size=count, replace=False).tolist())
        return inject_tampering(sample, ids, "remove", settings=settings)
    donors = _insert_donors(cfg, rng, sample.num_frames)
    ids = sorted({p.person_id for poses in donors for p in poses})
    return inject_tampering(sample, ids, "insert", donors=donors, settings=settings)


def playback_source(
    samples: Sequence[GopSample], target: int, pool: Sequence[int], rng: np.random.Generator
) -> int | None:
    """A random GOP from `pool` whose video differs from the target's."""
    for candidate in rng.permutation(np.asarray(pool, dtype=np.int64)).tolist():
        if candidate == target:
            continue
        if not is_degenerate_playback(samples[target], samples[candidate]):
            return int(candidate)
    return None


def forge_split(
    cfg: PipelineConfig, samples: Sequence[GopSample], members: Sequence[int]
) -> dict[int, GopSample]:
    """Forged replacements for a `forged_fraction` of one split's GOPs, keyed by index."""
    if not members:
        return {}
    first = min(members)
    rng = np.random.default_rng([cfg.seed, _ATTACK_STREAM, first])
    n_forged = round(cfg.sim.forged_fraction * len(members))
    targets = sorted(rng.choice(np.asarray(members), size=n_forged, replace=False).tolist())
    kinds = ["playback"] * (n_forged // 2) + ["tampering"] * (n_forged - n_forged // 2)
    rng.shuffle(kinds)

    forged: dict[int, GopSample] = {}
    for target, kind in zip(targets, kinds, strict=True):
        gop_rng = np.random.default_rng([cfg.seed, _ATTACK_STREAM, first, target])
        if kind == "playback":
            source = playback_source(samples, target, members, gop_rng)
            if source is not None:
                spec = AttackSpec(kind="playback", target=target, source=source)
                forged[target] = inject_playback(samples, spec)
                continue
            logger.warning(
                "%s: every playback source is degenerate; tampering instead", gop_id(target)
            )
        forged[target] = tamper(cfg, samples[target], gop_rng)
    return forged


# ============================================================
# Manifest
# ============================================================


def _frames_json(frames: Frames) -> list[list[dict[str, Any]]]:
    return [[p.to_json_dict() for p in poses] for poses in frames]


def _frames_from_json(data: list[list[dict[str, Any]]]) -> Frames:
    return tuple(tuple(SkeletonPose.from_json_dict(p) for p in poses) for poses in data)


@dataclass(frozen=True)
class GopEntry:
    """One manifest row: labels and file locations relative to the dataset root."""

    gop_id: str
    label: Label
    split: Split
    scene_id: int
    index: int
    environment: str
    num_people: int
    low_quality: bool
    attack: dict[str, Any] | None
    rf: str
    visual: str | None
    skeletons: str
    abnormal: str

    @property
    def forged(self) -> bool:
        return self.label != "authentic"

    @property
    def z(self) -> int:
        return 1 if self.forged else -1

    @property
    def attack_kind(self) -> str | None:
        return None if self.attack is None else str(self.attack["kind"])

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "id": self.gop_id,
            "label": self.label,
            "split": self.split,
            "sceneId": self.scene_id,
            "index": self.index,
            "environment": self.environment,
            "numPeople": self.num_people,
            "lowQuality": self.low_quality,
            "attack": self.attack,
            "rf": self.rf,
            "visual": self.visual,
            "skeletons": self.skeletons,
            "abnormal": self.abnormal,
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> GopEntry:
        return cls(
            gop_id=data["id"],
            label=data["label"],
            split=data["split"],
            scene_id=int(data["sceneId"]),
            index=int(data["index"]),
            environment=data["environment"],
            num_people=int(data["numPeople"]),
            low_quality=bool(data["lowQuality"]),
            attack=data["attack"],
            rf=data["rf"],
            visual=data["visual"],
            skeletons=data["skeletons"],
            abnormal=data["abnormal"],
        )


@dataclass(frozen=True)
class Manifest:
    root: Path
    config: dict[str, Any]
    entries: tuple[GopEntry, ...]

    def split(self, name: Split) -> list[GopEntry]:
        return [e for e in self.entries if e.split == name]

    def __len__(self) -> int:
        return len(self.entries)


def _write_frames_file(path: Path, gop: str, frames: dict[str, Frames]) -> None:
    body = {"gopId": gop, **{k: _frames_json(v) for k, v in frames.items()}}
    atomic_write_text(path, json.dumps(body, indent=1) + "\n")


def _read_frames_file(path: Path, gop: str, keys: Sequence[str]) -> dict[str, Frames]:
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("gopId") != gop:
        raise ValueError(f"{path}: belongs to {data.get('gopId')!r}, expected {gop!r}")
    return {k: _frames_from_json(data[k]) for k in keys}


@dataclass(frozen=True)
class GopSkeletons:
    visual: Frames
    real: Frames
    abnormal: Frames


def load_skeletons(manifest: Manifest, entry: GopEntry) -> GopSkeletons:
    """Skeleton ground truth of one GOP, read from its per-GOP JSON files."""
    shown = _read_frames_file(manifest.root / entry.skeletons, entry.gop_id, ("visual", "real"))
    abnormal = _read_frames_file(manifest.root / entry.abnormal, entry.gop_id, ("abnormal",))
    return GopSkeletons(visual=shown["visual"], real=shown["real"], abnormal=abnormal["abnormal"])


def write_gop(out_dir: Path, sample: GopSample, split: Split, *, store_visual: bool) -> GopEntry:
    root = Path(out_dir)
    rf_rel = f"rf/{sample.gop_id}.spt"
    save_tensors(root / rf_rel, {"rf": sample.rf_frames})
    visual_rel = None
    if store_visual:
        visual_rel = f"visual/{sample.gop_id}.spt"
        save_tensors(root / visual_rel, {"jhm": sample.jhm, "paf": sample.paf})
    skeletons_rel = f"skeletons/{sample.gop_id}_skeletons.json"
    _write_frames_file(
        root / skeletons_rel,
        sample.gop_id,
        {"visual": sample.visual_poses, "real": sample.real_poses},
    )
    abnormal_rel = f"abnormal/{sample.gop_id}_abnormal.json"
    _write_frames_file(root / abnormal_rel, sample.gop_id, {"abnormal": sample.abnormal_poses})
    return GopEntry(
        gop_id=sample.gop_id,
        label=sample.label,
        split=split,
        scene_id=sample.scene_id,
        index=sample.index,
        environment=sample.environment,
        num_people=sample.num_people,
        low_quality=sample.low_quality,
        attack=None if sample.attack is None else sample.attack.to_json_dict(),
        rf=rf_rel,
        visual=visual_rel,
        skeletons=skeletons_rel,
        abnormal=abnormal_rel,
    )


def write_manifest(out_dir: Path, cfg: PipelineConfig, entries: Sequence[GopEntry]) -> Path:
    body = {
        "version": MANIFEST_VERSION,
        "config": config_to_json_dict(cfg),
        "gops": [e.to_json_dict() for e in entries],
    }
    return atomic_write_text(Path(out_dir) / MANIFEST_NAME, json.dumps(body, indent=1) + "\n")


def load_manifest(dataset_dir: Path) -> Manifest:
    root = Path(dataset_dir)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {path} (run `securepose simulate`)")
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {data.get('version')!r}")
    entries = tuple(GopEntry.from_json_dict(e) for e in data["gops"])
    return Manifest(root=root, config=data["config"], entries=entries)


def load_gop(manifest: Manifest, entry: GopEntry, settings: RenderSettings) -> GopSample:
    """Rebuild a GopSample; the visual side is re-rendered when it was not stored."""
    rf = load_tensors(manifest.root / entry.rf)["rf"]
    skeletons = load_skeletons(manifest, entry)
    if entry.visual is not None:
        visual = load_tensors(manifest.root / entry.visual)
        jhm, paf = visual["jhm"], visual["paf"]
    else:
        jhm, paf = render_gop(skeletons.visual, settings)
    attack = None
    if entry.attack is not None:
        attack = AttackSpec(
            kind=entry.attack["kind"],
            target=int(entry.attack["target"]),
            source=entry.attack["source"],
            person_ids=tuple(entry.attack["personIds"]),
        )
    return GopSample(
        gop_id=entry.gop_id,
        scene_id=entry.scene_id,
        index=entry.index,
        label=entry.label,
        rf_frames=rf,
        jhm=jhm,
        paf=paf,
        visual_poses=skeletons.visual,
        real_poses=skeletons.real,
        abnormal_poses=skeletons.abnormal,
        low_quality=entry.low_quality,
        environment=entry.environment,
        attack=attack,
    )


# ============================================================
# Build
# ============================================================


def build_dataset(cfg: PipelineConfig, out_dir: Path) -> Manifest:
    """Simulate, attack and persist the whole dataset; the manifest is written last."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plans = plan_scenes(cfg)

    def run(plan: ScenePlan) -> list[GopSample]:
        return simulate_scene(cfg, plan, out_dir)

    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        per_scene = list(pool.map(run, plans))
    samples = [s for scene in per_scene for s in scene]
    split_of = {
        s.index: plan.split for plan, scene in zip(plans, per_scene, strict=True) for s in scene
    }

    final = list(samples)
    for split in SPLITS:
        members = [s.index for s in samples if split_of[s.index] == split]
        for index, forged in forge_split(cfg, samples, members).items():
            final[index] = forged

    entries = [
        write_gop(out_dir, s, split_of[s.index], store_visual=cfg.sim.store_visual_tensors)
        for s in final
    ]
    write_effective_config(cfg, out_dir)
    write_manifest(out_dir, cfg, entries)

    labels = ("authentic", "playback", "tampering")
    counts = {label: sum(e.label == label for e in entries) for label in labels}
    low = sum(e.low_quality for e in entries)
    logger.info(
        "dataset: %d GOPs in %d scenes (%s), %d low quality",
        len(entries),
        len(plans),
        ", ".join(f"{k}={v}" for k, v in counts.items()),
        low,
    )
    return load_manifest(out_dir)


def gop_samples(
    manifest: Manifest, entries: Sequence[GopEntry], settings: RenderSettings
) -> list[GopSample]:
    return [load_gop(manifest, e, settings) for e in entries]
