"""Stage drivers behind the `securepose` commands.

Every stage reads and writes under one run directory:

    <out>/dataset/            simulate
    <out>/models/pose.spt     train-pose (+ pose.json header, pose_training.json)
    <out>/models/detector.spt train-detector (+ detector.json, detector_training.json)
    <out>/detect/decisions.csv    detect: gop_id,score,label
    <out>/localize/report.json    localize (+ previews/*.png when enabled)
    <out>/eval/metrics.json       eval
    <out>/bench/bench.json        bench

A stage that needs an earlier stage's output raises FileNotFoundError
naming the missing file. Frozen-model stages score GOPs on a thread pool
of `workers` threads; results are collected in manifest order.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from numpy.typing import NDArray

from securepose import preview
from securepose.config import ConfigError, PipelineConfig, write_effective_config
from securepose.csi2pose import (
    PoseModel,
    PoseTrainingItem,
    load_pose_model,
    predict_pose,
    save_pose_model,
    train_pose,
)
from securepose.dataset import (
    GopEntry,
    Manifest,
    Split,
    build_dataset,
    load_gop,
    load_manifest,
    render_settings,
)
from securepose.detector import (
    DetectorModel,
    compact_jhms,
    decide,
    detect,
    flops,
    load_detector,
    save_detector,
    train_detector,
)
from securepose.localizer import (
    GopLocalization,
    abnormal_poses,
    associate,
    localize_gop,
    nms,
    write_localization_report,
)
from securepose.metrics import PckCounts, PckResult, build_report, pck_counts, pck_from_counts
from securepose.pose_features import SkeletonPose
from securepose.scene_sim import GopSample
from securepose.tensor_file import atomic_write_text

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

DECISIONS_HEADER = ("gop_id", "score", "label")


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def dataset(self) -> Path:
        return self.root / "dataset"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def pose_model(self) -> Path:
        return self.models / "pose.spt"

    @property
    def detector_model(self) -> Path:
        return self.models / "detector.spt"

    @property
    def decisions(self) -> Path:
        return self.root / "detect" / "decisions.csv"

    @property
    def localization(self) -> Path:
        return self.root / "localize" / "report.json"

    @property
    def previews(self) -> Path:
        return self.root / "localize" / "previews"

    @property
    def metrics(self) -> Path:
        return self.root / "eval" / "metrics.json"

    @property
    def bench(self) -> Path:
        return self.root / "bench" / "bench.json"


def run_paths(cfg: PipelineConfig) -> RunPaths:
    return RunPaths(Path(cfg.out_dir))


def _parallel_map(cfg: PipelineConfig, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    if cfg.workers == 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, body: Any) -> Path:
    return atomic_write_text(path, json.dumps(body, indent=2) + "\n")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found (run `securepose {stage}` first)")
    return path


# ============================================================
# simulate
# ============================================================


def simulate(cfg: PipelineConfig) -> Manifest:
    paths = run_paths(cfg)
    manifest = build_dataset(cfg, paths.dataset)
    write_effective_config(cfg, paths.root)
    return manifest


def _manifest(cfg: PipelineConfig) -> Manifest:
    paths = run_paths(cfg)
    _require(paths.dataset / "manifest.json", "simulate")
    return load_manifest(paths.dataset)


def _load(cfg: PipelineConfig, manifest: Manifest, entry: GopEntry) -> GopSample:
    return load_gop(manifest, entry, render_settings(cfg))


# ============================================================
# train-pose / train-detector
# ============================================================


def _pose_items(
    cfg: PipelineConfig, manifest: Manifest, entries: Sequence[GopEntry]
) -> list[PoseTrainingItem]:
    items = []
    for entry in entries:
        sample = _load(cfg, manifest, entry)
        items.append(PoseTrainingItem(rf_frames=sample.rf_frames, jhm=sample.jhm, paf=sample.paf))
    return items


def run_train_pose(cfg: PipelineConfig) -> PoseModel:
    """Cross-modal training on the authentic GOPs of the train split."""
    paths = run_paths(cfg)
    manifest = _manifest(cfg)
    train = [e for e in manifest.split("train") if not e.forged]
    val = [e for e in manifest.split("val") if not e.forged]
    if not train:
        raise ConfigError("the train split has no authentic GOPs to train CSI2Pose on")
    logger.info("training CSI2Pose on %d GOPs (%d validation)", len(train), len(val))
    model, log = train_pose(
        _pose_items(cfg, manifest, train),
        cfg.pose_net,
        cfg.pose_train,
        weights=cfg.loss_weights,
        val_items=_pose_items(cfg, manifest, val),
        seed=cfg.seed,
    )
    save_pose_model(paths.pose_model, model)
    _write_json(paths.models / "pose_training.json", log.to_json_dict())
    write_effective_config(cfg, paths.models)
    return model


def wireless_features(
    model: PoseModel, sample: GopSample
) -> tuple[NDArray[np.float32], NDArray[np.float32]]:
    return predict_pose(model, sample.rf_frames)


def compacted_gop(
    cfg: PipelineConfig, model: PoseModel, sample: GopSample
) -> NDArray[np.float32]:
    s_r, _ = wireless_features(model, sample)
    return compact_jhms(sample.jhm, s_r, cfg.detector.pool_size)


def run_train_detector(cfg: PipelineConfig) -> DetectorModel:
    """Train the detector on compacted (visual, wireless) JHM pairs of the train split."""
    paths = run_paths(cfg)
    manifest = _manifest(cfg)
    pose_model = load_pose_model(_require(paths.pose_model, "train-pose"))
    entries = manifest.split("train")
    if not entries:
        raise ConfigError("the train split is empty")

    def features(entry: GopEntry) -> NDArray[np.float32]:
        return compacted_gop(cfg, pose_model, _load(cfg, manifest, entry))

    x = np.stack(_parallel_map(cfg, features, entries))
    z = np.array([e.z for e in entries], dtype=np.int64)
    logger.info(
        "training detector on %d GOPs (%d forged)", len(entries), int(np.sum(z == 1))
    )
    model, log = train_detector(x, z, cfg.detector, cfg.detector_train, seed=cfg.seed)
    save_detector(paths.detector_model, model)
    _write_json(paths.models / "detector_training.json", log.to_json_dict())
    write_effective_config(cfg, paths.models)
    return model


# ============================================================
# detect
# ============================================================


@dataclass(frozen=True)
class DecisionRow:
    gop_id: str
    score: float
    label: int


def write_decisions(path: Path, rows: Sequence[DecisionRow]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DECISIONS_HEADER)
    for row in rows:
        writer.writerow([row.gop_id, repr(row.score), row.label])
    return atomic_write_text(path, buf.getvalue())


def read_decisions(path: Path) -> list[DecisionRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DECISIONS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(DECISIONS_HEADER)}")
        return [DecisionRow(gop_id=r[0], score=float(r[1]), label=int(r[2])) for r in reader]


def _load_models(cfg: PipelineConfig) -> tuple[PoseModel, DetectorModel]:
    paths = run_paths(cfg)
    pose = load_pose_model(_require(paths.pose_model, "train-pose"))
    det = load_detector(_require(paths.detector_model, "train-detector"))
    return pose, det


def run_detect(cfg: PipelineConfig, split: Split = "test") -> list[DecisionRow]:
    """Score every GOP of a split; one decision per manifest entry."""
    paths = run_paths(cfg)
    manifest = _manifest(cfg)
    pose_model, det_model = _load_models(cfg)
    entries = manifest.split(split)

    def score(entry: GopEntry) -> DecisionRow:
        sample = _load(cfg, manifest, entry)
        s = detect(det_model, compacted_gop(cfg, pose_model, sample))
        decision = decide(s)
        return DecisionRow(gop_id=entry.gop_id, score=decision.score, label=decision.label)

    rows = _parallel_map(cfg, score, entries)
    write_decisions(paths.decisions, rows)
    logger.info(
        "detect: %d GOPs scored, %d flagged forged", len(rows), sum(r.label == 1 for r in rows)
    )
    return rows


# ============================================================
# localize
# ============================================================


def run_localize(cfg: PipelineConfig) -> list[GopLocalization]:
    """Localize abnormal people in every GOP the detector flagged."""
    paths = run_paths(cfg)
    manifest = _manifest(cfg)
    pose_model = load_pose_model(_require(paths.pose_model, "train-pose"))
    rows = read_decisions(_require(paths.decisions, "detect"))
    flagged = {r.gop_id for r in rows if r.label == 1}
    entries = [e for e in manifest.entries if e.gop_id in flagged]

    def work(entry: GopEntry) -> GopLocalization:
        sample = _load(cfg, manifest, entry)
        s_r, l_r = wireless_features(pose_model, sample)
        result = localize_gop(sample.gop_id, sample.jhm, s_r, sample.paf, l_r, cfg.localizer)
        if cfg.eval.previews:
            preview.write_gop_previews(paths.previews, sample.jhm, s_r, result)
        return result

    results = _parallel_map(cfg, work, entries)
    write_localization_report(paths.localization, results)
    logger.info(
        "localize: %d GOPs, %d abnormal skeletons",
        len(results),
        sum(r.num_abnormal for r in results),
    )
    return results


# ============================================================
# eval
# ============================================================


FramePair = tuple[Sequence[SkeletonPose], Sequence[SkeletonPose]]


def _pck_over(frames: Sequence[FramePair], thresholds: Sequence[float]) -> dict[float, PckResult]:
    """PCK at each threshold over `(predicted, truth)` frames; empty without ground truth."""
    table: dict[float, PckResult] = {}
    for rho in thresholds:
        counts = PckCounts()
        for predicted, truth in frames:
            counts += pck_counts(predicted, truth, rho)
        if counts.persons_seen:
            table[rho] = pck_from_counts(counts, rho)
    return table


def localization_pck(
    cfg: PipelineConfig,
    pairs: Sequence[tuple[GopSample, GopLocalization]],
) -> dict[str, dict[float, PckResult]]:
    """PCK tables of localized vs ground-truth abnormal skeletons, per attack label."""
    groups: dict[str, list[tuple[GopSample, GopLocalization]]] = {"all": list(pairs)}
    for sample, result in pairs:
        groups.setdefault(sample.label, []).append((sample, result))
    out: dict[str, dict[float, PckResult]] = {}
    for name, members in groups.items():
        frames: list[FramePair] = [
            (abnormal_poses(found), truth)
            for sample, result in members
            for truth, found in zip(sample.abnormal_poses, result.frames, strict=True)
        ]
        table = _pck_over(frames, cfg.eval.pck_thresholds)
        if table:
            out[name] = table
    return out


def decoded_wireless_poses(
    cfg: PipelineConfig,
    jhm_wireless: NDArray[np.floating],
    paf_wireless: NDArray[np.floating],
) -> list[list[SkeletonPose]]:
    """Skeletons decoded per frame from the wireless JHM/PAF alone."""
    loc = cfg.localizer
    return [
        abnormal_poses(associate(nms(jhm_wireless[m], loc.window, loc.tau), paf_wireless[m], loc))
        for m in range(jhm_wireless.shape[0])
    ]


def pose_estimation_pck(
    cfg: PipelineConfig, model: PoseModel, samples: Sequence[GopSample]
) -> dict[float, PckResult]:
    """PCK of wireless-only skeletons against the people really in the scene."""
    frames: list[FramePair] = []
    for sample in samples:
        s_r, l_r = wireless_features(model, sample)
        decoded = decoded_wireless_poses(cfg, s_r, l_r)
        frames.extend(zip(decoded, sample.real_poses, strict=True))
    return _pck_over(frames, cfg.eval.pck_thresholds)


def run_eval(cfg: PipelineConfig) -> dict[str, Any]:
    """Detection metrics from the decisions file, localization PCK on the forged
    test GOPs, and wireless pose-estimation PCK on every scored GOP."""
    paths = run_paths(cfg)
    manifest = _manifest(cfg)
    rows = read_decisions(_require(paths.decisions, "detect"))
    by_id = {e.gop_id: e for e in manifest.entries}
    missing = [r.gop_id for r in rows if r.gop_id not in by_id]
    if missing:
        raise ValueError(f"decisions reference unknown GOPs: {', '.join(missing[:5])}")
    entries = [by_id[r.gop_id] for r in rows]

    pose_model = load_pose_model(_require(paths.pose_model, "train-pose"))

    def work(entry: GopEntry) -> tuple[GopSample, GopLocalization | None, list[FramePair]]:
        sample = _load(cfg, manifest, entry)
        s_r, l_r = wireless_features(pose_model, sample)
        decoded = decoded_wireless_poses(cfg, s_r, l_r)
        result = None
        if entry.forged:
            result = localize_gop(sample.gop_id, sample.jhm, s_r, sample.paf, l_r, cfg.localizer)
        return sample, result, list(zip(decoded, sample.real_poses, strict=True))

    scored = _parallel_map(cfg, work, entries)
    localized = [(sample, result) for sample, result, _ in scored if result is not None]
    pose_frames = [pair for _, _, pairs in scored for pair in pairs]
    report = build_report(
        [r.score for r in rows],
        [r.label for r in rows],
        [e.z for e in entries],
        attacks=[e.label if e.forged else None for e in entries],
        people=[e.num_people for e in entries],
        pck_tables=localization_pck(cfg, localized),
        pose_pck=_pck_over(pose_frames, cfg.eval.pck_thresholds),
        pose_refiner=pose_model.config.use_refiner,
    )
    body = report.to_json_dict()
    _write_json(paths.metrics, body)
    det = report.detection
    logger.info(
        "eval: accuracy=%s tpr=%s fpr=%s auroc=%s",
        det.accuracy,
        det.tpr,
        det.fpr,
        report.auroc,
    )
    return body


# ============================================================
# bench
# ============================================================


def run_bench(cfg: PipelineConfig) -> dict[str, Any]:
    """Per-stage wall time per GOP with frozen models, plus detector size."""
    paths = run_paths(cfg)
    manifest = _manifest(cfg)
    pose_model, det_model = _load_models(cfg)
    entries = (manifest.split("test") or list(manifest.entries))[: cfg.eval.bench_gops]
    if not entries:
        raise ConfigError("the dataset has no GOPs to benchmark")

    stages: dict[str, list[float]] = {"pose": [], "detect": [], "localize": []}
    for entry in entries:
        sample = _load(cfg, manifest, entry)
        t0 = time.perf_counter()
        s_r, l_r = wireless_features(pose_model, sample)
        t1 = time.perf_counter()
        decide(detect(det_model, compact_jhms(sample.jhm, s_r, cfg.detector.pool_size)))
        t2 = time.perf_counter()
        localize_gop(sample.gop_id, sample.jhm, s_r, sample.paf, l_r, cfg.localizer)
        t3 = time.perf_counter()
        stages["pose"].append(t1 - t0)
        stages["detect"].append(t2 - t1)
        stages["localize"].append(t3 - t2)

    per_gop_ms = {k: 1000.0 * float(np.mean(v)) for k, v in stages.items()}
    per_gop_ms["total"] = sum(per_gop_ms.values())
    gop_seconds = cfg.sim.gop_size / cfg.sim.fps
    body = {
        "gops": len(entries),
        "perGopMs": per_gop_ms,
        "gopDurationMs": 1000.0 * gop_seconds,
        "realTime": per_gop_ms["total"] < 1000.0 * gop_seconds,
        "poseParameters": pose_model.params.parameter_count(),
        "detectorParameters": det_model.parameter_count(),
        "detectorFlops": flops(cfg.detector),
    }
    _write_json(paths.bench, body)
    return body


STAGES: dict[str, Callable[[PipelineConfig], Any]] = {
    "simulate": simulate,
    "train-pose": run_train_pose,
    "train-detector": run_train_detector,
    "detect": run_detect,
    "localize": run_localize,
    "eval": run_eval,
    "bench": run_bench,
}


def run_pipeline(command: str, cfg: PipelineConfig) -> Any:
    if command not in STAGES:
        raise ValueError(f"unknown command {command!r}; choose from {', '.join(STAGES)}")
    return STAGES[command](cfg)
