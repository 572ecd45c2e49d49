"""End-to-end orchestration: config loading, staged runs, manifests.

A run executes resample -> VAD gate -> window -> reduce targets ->
functionals -> normalize -> KELM train/predict (or base-prediction
ingestion) -> fusion -> interpolation to the ground-truth timeline ->
smoothing -> evaluation. Every stage reads its inputs from files and
writes its outputs to files in the run directory, so the single-shot
run and the stage-by-stage CLI produce bit-identical artifacts.

Determinism contract: all floats are serialized with 17 significant
digits, per-video work merges in sorted video-id order regardless of
the worker count, and the manifest's output hash depends only on the
config, the seed, and the input files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import yaml

from .errors import (
    AlignmentError,
    ConfigError,
    DataFormatError,
    MissingInputError,
    TaskMismatchError,
)
from .features import (
    FunctionalSet,
    apply_minmax,
    batch_functionals,
    fit_minmax,
    per_video_minmax,
    write_scaler_csv,
)
from .forest import ForestSpec
from .fusion import (
    FusionMatrix,
    apply_fusion,
    dwf_search,
    mean_fusion,
    sample_pool,
    stack_and_fuse_rf,
    uniform_matrix,
    write_fusion_matrix,
    write_score_table,
)
from .kelm import (
    DEFAULT_C_GRID,
    KernelSpec,
    class_weights,
    encode_classification_targets,
    load_kelm_model,
    predict_kelm,
    save_kelm_model,
    select_c,
    train_kelm,
)
from .metrics import EvalReport, classification_report, va_report, write_report
from .synth import SyntheticSpec
from .timeline import (
    FLOAT_FMT,
    N_EXPR_CLASSES,
    FrameTrack,
    SmoothingSpec,
    hamming_smooth,
    interpolate_to,
    read_track_csv,
    resample_track,
    write_track_csv,
)
from .windowing import (
    WindowBatch,
    WindowSpec,
    labels_to_track,
    read_label_csv,
    read_vad_csv,
    slice_windows,
    voiced_segments,
    window_labels,
    window_va_means,
    write_label_csv,
)

log = logging.getLogger("affectpipe")

NORMALIZATIONS = ("none", "global_minmax", "per_video_minmax")
FUSION_METHODS = ("dwf", "rf", "mean")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KelmSettings:
    enabled: bool = True
    kernel: str = "rbf"
    gamma: float | None = None
    c_grid: tuple[float, ...] = DEFAULT_C_GRID
    weighted: bool = True


@dataclass(frozen=True)
class FusionSettings:
    method: str = "mean"
    pool_size: int = 10_000
    alpha: float = 1.0
    tree_grid: tuple[int, ...] = (10, 20, 50, 100, 200)


@dataclass(frozen=True)
class PostprocessSettings:
    smooth_seconds: float = 0.5
    target_fps: float | None = None  # None: the working rate
    video_fps: tuple[tuple[str, float], ...] = ()  # per-video overrides

    def fps_for(self, video_id: str, default: float) -> float:
        for vid, fps in self.video_fps:
            if vid == video_id:
                return fps
        return self.target_fps if self.target_fps is not None else default


@dataclass(frozen=True)
class PipelineConfig:
    task: str = "expr"
    seed: int = 0
    workers: int = 1
    fps_target: float = 5.0
    embeddings: str | None = None
    labels: str | None = None
    vad: str | None = None
    source_fps: float | None = None  # None: already at the working rate
    base_predictions: tuple[str, ...] = ()
    dev_videos: tuple[str, ...] = ()
    window_seconds: float = 4.0
    hop_seconds: float = 2.0
    functionals: tuple[str, ...] = ("mean", "max", "min")
    normalization: str = "global_minmax"
    kelm: KelmSettings = KelmSettings()
    fusion: FusionSettings = FusionSettings()
    postprocess: PostprocessSettings = PostprocessSettings()
    output_dir: str = "runs"
    synth: SyntheticSpec | None = None

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.window_seconds, self.hop_seconds, self.fps_target)

    @property
    def functional_set(self) -> FunctionalSet:
        return FunctionalSet(self.functionals)

    @property
    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(kind=self.kelm.kernel, gamma=self.kelm.gamma)

    @property
    def metric(self) -> str:
        return "macro_f1" if self.task == "expr" else "mean_ccc"

    @property
    def n_outputs(self) -> int:
        return N_EXPR_CLASSES if self.task == "expr" else 2

    @property
    def track_kind(self) -> str:
        return "class_scores" if self.task == "expr" else "va"

    def run_dir(self) -> Path:
        return Path(self.output_dir) / f"run-{config_hash(self)[:12]}"


_DEFAULTS: dict = {
    "task": "expr",
    "seed": 0,
    "workers": 1,
    "fps_target": 5.0,
    "paths": {
        "embeddings": None,
        "labels": None,
        "vad": None,
        "base_predictions": [],
        "source_fps": None,
    },
    "split": {"dev_videos": []},
    "window": {"window_seconds": 4.0, "hop_seconds": 2.0},
    "functionals": ["mean", "max", "min"],
    "normalization": "global_minmax",
    "kelm": {
        "enabled": True,
        "kernel": "rbf",
        "gamma": None,
        "c_grid": list(DEFAULT_C_GRID),
        "weighted": True,
    },
    "fusion": {
        "method": "mean",
        "pool_size": 10_000,
        "alpha": 1.0,
        "tree_grid": [10, 20, 50, 100, 200],
    },
    "postprocess": {"smooth_seconds": 0.5, "target_fps": None, "video_fps": {}},
    "output": {"dir": "runs"},
    "synth": None,
}

_SYNTH_KEYS = (
    "n_videos",
    "frames_per_video",
    "embedding_dim",
    "class_count",
    "noise",
    "priors",
    "block_seconds",
    "voiced_fraction",
)


def _merge_section(name: str, defaults: dict, given: dict) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config key(s) in {name}: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(given)
    return merged


def load_config(
    path: str | Path | None = None,
    seed: int | None = None,
    workers: int | None = None,
    out_dir: str | None = None,
) -> PipelineConfig:
    """Build a validated config from defaults, a YAML file, and overrides.

    Precedence: CLI flag overrides > file values > defaults. Structural
    problems raise ConfigError; a missing config file raises
    MissingInputError. Referenced data files are checked by the stages
    that read them, so a config may be loaded before `synth` has
    produced its files.
    """
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        raw = loaded

    top = _merge_section("config", _DEFAULTS, raw)
    for section in ("paths", "split", "window", "kelm", "fusion", "postprocess", "output"):
        given = top[section]
        if given is None:
            given = {}
        if not isinstance(given, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        top[section] = _merge_section(section, _DEFAULTS[section], given)

    if seed is not None:
        top["seed"] = seed
    if workers is not None:
        top["workers"] = workers
    if out_dir is not None:
        top["output"] = dict(top["output"], dir=out_dir)

    try:
        synth = None
        if top["synth"] is not None:
            if not isinstance(top["synth"], dict):
                raise ConfigError("config section 'synth' must be a mapping")
            unknown = set(top["synth"]) - set(_SYNTH_KEYS)
            if unknown:
                raise ConfigError(f"unknown config key(s) in synth: {sorted(unknown)}")
            synth_kwargs = dict(top["synth"])
            if synth_kwargs.get("priors") is not None:
                synth_kwargs["priors"] = tuple(synth_kwargs["priors"])
            synth = SyntheticSpec(
                task=top["task"],
                seed=int(top["seed"]),
                fps=float(top["fps_target"]),
                **synth_kwargs,
            )
        video_fps = tuple(
            sorted((str(k), float(v)) for k, v in top["postprocess"]["video_fps"].items())
        )
        config = PipelineConfig(
            task=str(top["task"]),
            seed=int(top["seed"]),
            workers=int(top["workers"]),
            fps_target=float(top["fps_target"]),
            embeddings=top["paths"]["embeddings"],
            labels=top["paths"]["labels"],
            vad=top["paths"]["vad"],
            source_fps=(
                None
                if top["paths"]["source_fps"] is None
                else float(top["paths"]["source_fps"])
            ),
            base_predictions=tuple(str(p) for p in top["paths"]["base_predictions"]),
            dev_videos=tuple(str(v) for v in top["split"]["dev_videos"]),
            window_seconds=float(top["window"]["window_seconds"]),
            hop_seconds=float(top["window"]["hop_seconds"]),
            functionals=tuple(top["functionals"]),
            normalization=str(top["normalization"]),
            kelm=KelmSettings(
                enabled=bool(top["kelm"]["enabled"]),
                kernel=str(top["kelm"]["kernel"]),
                gamma=(
                    None if top["kelm"]["gamma"] is None else float(top["kelm"]["gamma"])
                ),
                c_grid=tuple(float(c) for c in top["kelm"]["c_grid"]),
                weighted=bool(top["kelm"]["weighted"]),
            ),
            fusion=FusionSettings(
                method=str(top["fusion"]["method"]),
                pool_size=int(top["fusion"]["pool_size"]),
                alpha=float(top["fusion"]["alpha"]),
                tree_grid=tuple(int(k) for k in top["fusion"]["tree_grid"]),
            ),
            postprocess=PostprocessSettings(
                smooth_seconds=float(top["postprocess"]["smooth_seconds"]),
                target_fps=(
                    None
                    if top["postprocess"]["target_fps"] is None
                    else float(top["postprocess"]["target_fps"])
                ),
                video_fps=video_fps,
            ),
            output_dir=str(top["output"]["dir"]),
            synth=synth,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc

    _validate(config)
    return config


def _validate(config: PipelineConfig) -> None:
    if config.task not in ("expr", "va"):
        raise ConfigError(f"task must be 'expr' or 'va', got {config.task!r}")
    if config.fps_target <= 0:
        raise ConfigError("fps_target must be positive")
    if config.workers < 1:
        raise ConfigError("workers must be >= 1")
    if config.source_fps is not None and config.source_fps < config.fps_target:
        raise ConfigError(
            f"fps_target {config.fps_target} exceeds the source rate "
            f"{config.source_fps}; downsampling only"
        )
    try:
        config.window_spec
        config.functional_set
        config.kernel_spec
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if config.normalization not in NORMALIZATIONS:
        raise ConfigError(
            f"normalization must be one of {NORMALIZATIONS}, got {config.normalization!r}"
        )
    if config.fusion.method not in FUSION_METHODS:
        raise ConfigError(
            f"fusion method must be one of {FUSION_METHODS}, got {config.fusion.method!r}"
        )
    if config.fusion.pool_size < 1 or config.fusion.alpha <= 0:
        raise ConfigError("fusion pool_size must be >= 1 and alpha positive")
    if not config.fusion.tree_grid or min(config.fusion.tree_grid) < 1:
        raise ConfigError("fusion tree_grid must be a nonempty list of positive counts")
    if not config.kelm.c_grid or min(config.kelm.c_grid) <= 0:
        raise ConfigError("kelm c_grid must be a nonempty list of positive values")
    if config.postprocess.smooth_seconds <= 0:
        raise ConfigError("postprocess smooth_seconds must be positive")
    if not config.kelm.enabled and not config.base_predictions:
        raise ConfigError(
            "nothing to run: kelm is disabled and no base predictions are configured"
        )
    if config.kelm.enabled and not config.dev_videos:
        raise ConfigError("kelm training needs a nonempty split.dev_videos")
    if config.kelm.enabled and not config.embeddings:
        raise ConfigError("config is missing paths.embeddings")
    if config.fusion.method in ("dwf", "rf") and not config.dev_videos:
        raise ConfigError(
            f"{config.fusion.method} fusion needs a nonempty split.dev_videos"
        )
    if not config.labels:
        raise ConfigError("config is missing paths.labels")


def config_to_dict(config: PipelineConfig) -> dict:
    """Canonical nested dict of everything that can influence outputs.

    The output directory and worker count are deliberately excluded:
    neither changes a single output byte, so runs of the same config
    into different directories share one hash.
    """
    synth = None
    if config.synth is not None:
        s = config.synth
        synth = {
            "n_videos": s.n_videos,
            "frames_per_video": s.frames_per_video,
            "embedding_dim": s.embedding_dim,
            "class_count": s.class_count,
            "noise": s.noise,
            "priors": None if s.priors is None else list(s.priors),
            "block_seconds": s.block_seconds,
            "voiced_fraction": s.voiced_fraction,
        }
    return {
        "task": config.task,
        "seed": config.seed,
        "fps_target": config.fps_target,
        "paths": {
            "embeddings": config.embeddings,
            "labels": config.labels,
            "vad": config.vad,
            "base_predictions": list(config.base_predictions),
            "source_fps": config.source_fps,
        },
        "split": {"dev_videos": list(config.dev_videos)},
        "window": {
            "window_seconds": config.window_seconds,
            "hop_seconds": config.hop_seconds,
        },
        "functionals": list(config.functionals),
        "normalization": config.normalization,
        "kelm": {
            "enabled": config.kelm.enabled,
            "kernel": config.kelm.kernel,
            "gamma": config.kelm.gamma,
            "c_grid": list(config.kelm.c_grid),
            "weighted": config.kelm.weighted,
        },
        "fusion": {
            "method": config.fusion.method,
            "pool_size": config.fusion.pool_size,
            "alpha": config.fusion.alpha,
            "tree_grid": list(config.fusion.tree_grid),
        },
        "postprocess": {
            "smooth_seconds": config.postprocess.smooth_seconds,
            "target_fps": config.postprocess.target_fps,
            "video_fps": {vid: fps for vid, fps in config.postprocess.video_fps},
        },
        "synth": synth,
    }


def config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Shared stage helpers
# ---------------------------------------------------------------------------


def _require_file(path: str | Path | None, what: str) -> Path:
    if not path:
        raise ConfigError(f"config is missing a required path: {what}")
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"{what} not found: {path}")
    return path


def _map_ordered(fn: Callable, items: Iterable, workers: int) -> list:
    """Apply fn to items, preserving order; threads when workers > 1."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


_OTHER_TASK = {"expr": "va", "va": "expr"}


def _read_labels_checked(path: Path, task: str) -> dict[str, dict[int, np.ndarray]]:
    """read_label_csv, upgrading a wrong-task header to TaskMismatchError."""
    try:
        return read_label_csv(path, task)
    except DataFormatError as exc:
        try:
            read_label_csv(path, _OTHER_TASK[task])
        except Exception:
            raise exc from None
        raise TaskMismatchError(
            f"{path} holds {_OTHER_TASK[task]} annotations but the task is {task!r}"
        ) from exc


def _load_truth_tracks(config: PipelineConfig) -> dict[str, FrameTrack]:
    """Ground-truth tracks on their native (per-video) timelines."""
    path = _require_file(config.labels, "labels file")
    rows = _read_labels_checked(path, config.task)
    return {
        vid: labels_to_track(
            vid,
            frames,
            fps=config.postprocess.fps_for(vid, config.fps_target),
            task=config.task,
        )
        for vid, frames in rows.items()
    }


def _truth_at_working_rate(config: PipelineConfig) -> dict[str, FrameTrack]:
    out = {}
    for vid, track in _load_truth_tracks(config).items():
        if abs(track.fps - config.fps_target) < 1e-9:
            out[vid] = track
        elif track.fps > config.fps_target:
            out[vid] = resample_track(track, config.fps_target)
        else:
            raise AlignmentError(
                f"labels for {vid!r} are at {track.fps} FPS, below the "
                f"working rate {config.fps_target}"
            )
    return out


def _dev_split(config: PipelineConfig, vids: Sequence[str]) -> tuple[list[str], list[str]]:
    """(train, dev) video lists in sorted order; validates the config split."""
    dev = sorted(config.dev_videos)
    unknown = [v for v in dev if v not in vids]
    if unknown:
        raise ConfigError(f"split.dev_videos names unknown videos: {unknown}")
    train = [v for v in sorted(vids) if v not in dev]
    return train, dev


def _evaluated_videos(config: PipelineConfig, vids: Sequence[str]) -> list[str]:
    return sorted(config.dev_videos) if config.dev_videos else sorted(vids)


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Intermediate file formats (pipeline-owned)
# ---------------------------------------------------------------------------


def _write_windows_csv(path: Path, batches: dict[str, WindowBatch]) -> None:
    vids = sorted(batches)
    first = batches[vids[0]]
    d = first.payload.shape[2]
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# fps={FLOAT_FMT % first.fps}\n")
        fh.write(f"# window={first.window_frames} hop={first.hop_frames}\n")
        for vid in vids:
            fh.write(f"# frames {vid} {batches[vid].n_source_frames}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["video_id", "window_index", "start", "row", "real"]
            + [f"x{j}" for j in range(d)]
        )
        for vid in vids:
            batch = batches[vid]
            for i, start in enumerate(batch.starts):
                for r in range(batch.window_frames):
                    writer.writerow(
                        [vid, i, start, r, int(batch.pad_mask[i, r])]
                        + [FLOAT_FMT % v for v in batch.payload[i, r]]
                    )


def _read_windows_meta(fh) -> dict:
    meta = {"frames": {}}
    while True:
        pos = fh.tell()
        line = fh.readline()
        if not line or not line.startswith("#"):
            fh.seek(pos)
            break
        body = line[1:].strip()
        if body.startswith("fps="):
            meta["fps"] = float(body[4:])
        elif body.startswith("window="):
            win, hop = body.split()
            meta["window"] = int(win.split("=")[1])
            meta["hop"] = int(hop.split("=")[1])
        elif body.startswith("frames "):
            _, vid, n = body.split()
            meta["frames"][vid] = int(n)
    if "fps" not in meta or "window" not in meta:
        raise DataFormatError("windows file is missing its # fps/# window header")
    return meta


def _read_windows_csv(path: Path) -> tuple[dict, dict[str, WindowBatch]]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        meta = _read_windows_meta(fh)
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:5] != ["video_id", "window_index", "start", "row", "real"]:
            raise DataFormatError(f"{path}: unexpected windows header")
        d = len(header) - 5
        per_video: dict[str, dict] = {}
        for row in reader:
            if not row:
                continue
            vid, i, start, r = row[0], int(row[1]), int(row[2]), int(row[3])
            entry = per_video.setdefault(vid, {"starts": {}, "rows": {}})
            entry["starts"][i] = start
            entry["rows"][(i, r)] = (row[4] == "1", [float(v) for v in row[5:]])
    batches = {}
    w = meta["window"]
    for vid, entry in per_video.items():
        n = len(entry["starts"])
        payload = np.empty((n, w, d))
        pad_mask = np.empty((n, w), dtype=bool)
        for (i, r), (real, values) in entry["rows"].items():
            payload[i, r] = values
            pad_mask[i, r] = real
        batches[vid] = WindowBatch(
            video_id=vid,
            starts=[entry["starts"][i] for i in range(n)],
            payload=payload,
            pad_mask=pad_mask,
            window_frames=w,
            hop_frames=meta["hop"],
            fps=meta["fps"],
            n_source_frames=meta["frames"][vid],
        )
    return meta, batches


def _write_window_targets(path: Path, targets: dict[str, np.ndarray], task: str) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if task == "expr":
            writer.writerow(["video_id", "window_index", "label"])
            for vid in sorted(targets):
                for i, label in enumerate(targets[vid]):
                    writer.writerow([vid, i, int(label)])
        else:
            writer.writerow(["video_id", "window_index", "valence", "arousal"])
            for vid in sorted(targets):
                for i, row in enumerate(targets[vid]):
                    writer.writerow([vid, i, FLOAT_FMT % row[0], FLOAT_FMT % row[1]])


def _read_window_targets(path: Path, task: str) -> dict[str, np.ndarray]:
    expected = (
        ["video_id", "window_index", "label"]
        if task == "expr"
        else ["video_id", "window_index", "valence", "arousal"]
    )
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise DataFormatError(f"{path}: expected header {','.join(expected)}")
        rows: dict[str, list] = {}
        for row in reader:
            if not row:
                continue
            values = [float(v) for v in row[2:]]
            rows.setdefault(row[0], []).append((int(row[1]), values))
    out = {}
    for vid, pairs in rows.items():
        pairs.sort()
        values = np.array([v for _, v in pairs])
        out[vid] = (
            values[:, 0].astype(np.int64) if task == "expr" else values
        )
    return out


def _write_features_csv(
    path: Path, meta: dict, feats: dict[str, np.ndarray], starts: dict[str, list[int]]
) -> None:
    vids = sorted(feats)
    p = feats[vids[0]].shape[1]
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# fps={FLOAT_FMT % meta['fps']}\n")
        fh.write(f"# window={meta['window']} hop={meta['hop']}\n")
        for vid in vids:
            fh.write(f"# frames {vid} {meta['frames'][vid]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["video_id", "window_index", "start"] + [f"f{j}" for j in range(p)]
        )
        for vid in vids:
            for i, row in enumerate(feats[vid]):
                writer.writerow(
                    [vid, i, starts[vid][i]] + [FLOAT_FMT % v for v in row]
                )


def _read_features_csv(path: Path) -> tuple[dict, dict[str, np.ndarray], dict[str, list[int]]]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        meta = _read_windows_meta(fh)
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["video_id", "window_index", "start"]:
            raise DataFormatError(f"{path}: unexpected features header")
        rows: dict[str, list] = {}
        for row in reader:
            if not row:
                continue
            rows.setdefault(row[0], []).append(
                (int(row[1]), int(row[2]), [float(v) for v in row[3:]])
            )
    feats, starts = {}, {}
    for vid, entries in rows.items():
        entries.sort()
        feats[vid] = np.array([values for _, _, values in entries])
        starts[vid] = [start for _, start, _ in entries]
    return meta, feats, starts


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_window(config: PipelineConfig, run_dir: Path) -> None:
    """Resample, gate by VAD, slice windows, and reduce window targets."""
    emb_path = _require_file(config.embeddings, "embeddings file")
    source_fps = config.source_fps or config.fps_target
    embeddings = read_track_csv(emb_path, fps=source_fps, kind="embedding")
    truth = _truth_at_working_rate(config)
    vad = read_vad_csv(_require_file(config.vad, "vad file")) if config.vad else None
    vids = sorted(embeddings)
    _dev_split(config, vids)
    missing = [v for v in vids if v not in truth]
    if missing:
        raise AlignmentError(f"window stage: no labels for video(s) {missing}")

    def one(vid: str):
        track = embeddings[vid]
        if abs(track.fps - config.fps_target) > 1e-9:
            track = resample_track(track, config.fps_target)
        segments = None
        if vad is not None:
            if vid not in vad:
                raise AlignmentError(f"window stage: no VAD rows for video {vid!r}")
            mask = vad[vid]
            if len(mask) != track.n_frames:
                raise AlignmentError(
                    f"window stage: VAD for {vid!r} has {len(mask)} frames, "
                    f"track has {track.n_frames}"
                )
            segments = voiced_segments(mask)
            if not segments:
                raise AlignmentError(f"window stage: video {vid!r} has no voiced frames")
        batch = slice_windows(track, config.window_spec, segments=segments)
        if config.task == "expr":
            target = window_labels(truth[vid], batch)
        else:
            target = window_va_means(truth[vid], batch)
        return vid, batch, target

    results = _map_ordered(one, vids, config.workers)
    batches = {vid: batch for vid, batch, _ in results}
    targets = {vid: target for vid, _, target in results}
    _write_windows_csv(run_dir / "windows.csv", batches)
    _write_window_targets(run_dir / "window_targets.csv", targets, config.task)
    log.info("window stage: %d windows over %d videos",
             sum(b.n_windows for b in batches.values()), len(vids))


def stage_features(config: PipelineConfig, run_dir: Path) -> None:
    """Per-window functionals plus the configured normalization."""
    meta, batches = _read_windows_csv(
        _require_file(run_dir / "windows.csv", "window stage output")
    )
    fset = config.functional_set
    vids = sorted(batches)

    def one(vid: str) -> np.ndarray:
        batch = batches[vid]
        return batch_functionals(batch.payload, fset, batch.pad_mask)

    feats = dict(zip(vids, _map_ordered(one, vids, config.workers)))
    if config.normalization == "global_minmax":
        train_vids, _ = _dev_split(config, vids)
        if not train_vids:
            raise ConfigError("global_minmax needs at least one non-dev video")
        scaler = fit_minmax([feats[v] for v in train_vids])
        feats = {vid: apply_minmax(feats[vid], scaler) for vid in vids}
        write_scaler_csv(run_dir / "scaler.csv", scaler)
    elif config.normalization == "per_video_minmax":
        feats = {vid: per_video_minmax(feats[vid]) for vid in vids}
    starts = {vid: batches[vid].starts for vid in vids}
    _write_features_csv(run_dir / "features.csv", meta, feats, starts)


def stage_train_kelm(config: PipelineConfig, run_dir: Path) -> None:
    """Select the regularizer on the dev split and train on the rest."""
    if not config.kelm.enabled:
        raise ConfigError("kelm stage is disabled in this config")
    _, feats, _ = _read_features_csv(
        _require_file(run_dir / "features.csv", "features stage output")
    )
    targets = _read_window_targets(
        _require_file(run_dir / "window_targets.csv", "window stage output"),
        config.task,
    )
    train_vids, dev_vids = _dev_split(config, sorted(feats))
    if not train_vids:
        raise ConfigError("kelm training needs at least one non-dev video")
    x_train = np.vstack([feats[v] for v in train_vids])
    x_dev = np.vstack([feats[v] for v in dev_vids])
    if config.task == "expr":
        y_train = np.concatenate([targets[v] for v in train_vids])
        y_dev = np.concatenate([targets[v] for v in dev_vids])
        enc = encode_classification_targets(y_train, N_EXPR_CLASSES)
        weights = class_weights(y_train) if config.kelm.weighted else None
        task = "classification"
    else:
        enc = np.vstack([targets[v] for v in train_vids])
        y_dev = np.vstack([targets[v] for v in dev_vids])
        weights = None
        task = "regression"
    best_c, dev_score = select_c(
        x_train,
        enc,
        config.kelm.c_grid,
        x_dev,
        y_dev,
        metric=config.metric,
        kernel=config.kernel_spec,
        weights=weights,
    )
    model = train_kelm(
        x_train, enc, best_c, kernel=config.kernel_spec, weights=weights, task=task
    )
    save_kelm_model(model, run_dir / "kelm_model.txt")
    with (run_dir / "selection.csv").open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["c", "dev_score"])
        writer.writerow([FLOAT_FMT % best_c, FLOAT_FMT % dev_score])
    log.info("kelm: C=%g scores %.4f (%s) on the dev split", best_c, dev_score,
             config.metric)


def _spread_window_scores(
    starts: Sequence[int],
    scores: np.ndarray,
    n_frames: int,
    window_frames: int,
    hop_frames: int,
) -> np.ndarray:
    """Window scores to a frame timeline.

    Each window's score row is assigned to the hop-sized span at the
    window's center; frames no span covers (edges, unvoiced gaps) are
    filled by linear interpolation between the surrounding spans, held
    constant beyond the first and last.
    """
    if len(starts) != scores.shape[0]:
        raise AlignmentError(
            f"{scores.shape[0]} score rows for {len(starts)} windows"
        )
    width = scores.shape[1]
    out = np.full((n_frames, width), np.nan)
    lead = (window_frames - hop_frames) // 2
    for start, row in zip(starts, scores):
        a = min(max(start + lead, 0), n_frames)
        b = min(a + hop_frames, n_frames)
        out[a:b] = row
    covered = ~np.isnan(out[:, 0])
    if not covered.any():
        raise AlignmentError("no window span lands inside the frame range")
    if not covered.all():
        idx = np.arange(n_frames, dtype=np.float64)
        for j in range(width):
            out[~covered, j] = np.interp(idx[~covered], idx[covered], out[covered, j])
    return out


def stage_predict_kelm(config: PipelineConfig, run_dir: Path) -> None:
    """Score every window and lay the scores onto the working timeline."""
    model = load_kelm_model(
        _require_file(run_dir / "kelm_model.txt", "train-kelm stage output")
    )
    meta, feats, starts = _read_features_csv(
        _require_file(run_dir / "features.csv", "features stage output")
    )
    vids = sorted(feats)

    def one(vid: str) -> FrameTrack:
        scores = predict_kelm(model, feats[vid])
        frame_scores = _spread_window_scores(
            starts[vid], scores, meta["frames"][vid], meta["window"], meta["hop"]
        )
        if config.task == "va":
            frame_scores = np.clip(frame_scores, -1.0, 1.0)
        return FrameTrack(vid, meta["fps"], frame_scores, kind=config.track_kind)

    tracks = _map_ordered(one, vids, config.workers)
    (run_dir / "models").mkdir(exist_ok=True)
    write_track_csv(run_dir / "models" / "kelm.csv", tracks)


def _load_model_tracks(
    config: PipelineConfig, run_dir: Path
) -> tuple[list[str], list[dict[str, FrameTrack]]]:
    """All fusion inputs: this run's KELM track plus configured bases."""
    names: list[str] = []
    models: list[dict[str, FrameTrack]] = []
    if config.kelm.enabled:
        path = _require_file(run_dir / "models" / "kelm.csv", "predict-kelm stage output")
        names.append("kelm")
        models.append(read_track_csv(path, fps=config.fps_target, kind=config.track_kind))
    for pred in config.base_predictions:
        path = _require_file(pred, "base predictions file")
        name = path.stem
        while name in names:
            name += "+"
        names.append(name)
        models.append(read_track_csv(path, fps=config.fps_target, kind=config.track_kind))
    return names, models


def stage_fuse(config: PipelineConfig, run_dir: Path) -> None:
    """Combine model score tracks with the configured fusion method."""
    names, models = _load_model_tracks(config, run_dir)
    vids = sorted(models[0])
    for name, model in zip(names, models):
        if sorted(model) != vids:
            raise AlignmentError(
                f"fuse stage: model {name!r} covers videos {sorted(model)}, "
                f"expected {vids}"
            )
    _dev_split(config, vids)
    eval_vids = _evaluated_videos(config, vids)
    n_outputs = config.n_outputs
    matrix: FusionMatrix | None = None
    method = config.fusion.method
    if method in ("dwf", "rf") and not config.dev_videos:
        raise ConfigError(f"{method} fusion needs a nonempty split.dev_videos")

    if method in ("dwf", "rf"):
        dev_vids = sorted(config.dev_videos)
        truth = _truth_at_working_rate(config)
        missing = [v for v in dev_vids if v not in truth]
        if missing:
            raise AlignmentError(f"fuse stage: no labels for dev video(s) {missing}")
        dev_preds = [
            np.vstack([model[v].values for v in dev_vids]) for model in models
        ]
        for v in dev_vids:
            if truth[v].n_frames != models[0][v].n_frames:
                raise AlignmentError(
                    f"fuse stage: labels for {v!r} have {truth[v].n_frames} frames, "
                    f"predictions have {models[0][v].n_frames}"
                )
        if config.task == "expr":
            dev_truth = np.concatenate([truth[v].labels() for v in dev_vids])
        else:
            dev_truth = np.vstack([truth[v].values for v in dev_vids])

    if method == "mean":
        fused = [
            mean_fusion([model[vid] for model in models], task=config.task)
            for vid in eval_vids
        ]
        matrix = uniform_matrix(len(models), n_outputs)
    elif method == "dwf":
        pool = sample_pool(
            len(models),
            n_outputs,
            pool_size=config.fusion.pool_size,
            alpha=config.fusion.alpha,
            seed=config.seed,
        )
        matrix, best_score, scores = dwf_search(
            pool, dev_preds, dev_truth, metric=config.metric
        )
        write_score_table(run_dir / "pool_scores.csv", scores)
        log.info("dwf: best of %d matrices scores %.4f on the dev split",
                 len(pool), best_score)
        fused = [
            apply_fusion([model[vid] for model in models], matrix, task=config.task)
            for vid in eval_vids
        ]
    else:  # rf
        target_preds = [
            np.vstack([model[v].values for v in eval_vids]) for model in models
        ]
        fused_arr, info = stack_and_fuse_rf(
            dev_preds,
            dev_truth,
            target_preds,
            task=config.task,
            base_spec=ForestSpec(n_trees=config.fusion.tree_grid[0], seed=config.seed),
            grid=config.fusion.tree_grid,
        )
        if info.overfit_gap > 0:
            log.warning(
                "rf fusion: dev score %.4f exceeds the out-of-bag estimate %.4f "
                "by %.4f; treat dev gains as optimistic",
                info.dev_score, info.oob_score, info.overfit_gap,
            )
        with (run_dir / "rf_info.csv").open("w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "value"])
            writer.writerow(["n_trees", str(info.n_trees)])
            writer.writerow(["oob_score", FLOAT_FMT % info.oob_score])
            writer.writerow(["dev_score", FLOAT_FMT % info.dev_score])
            writer.writerow(["overfit_gap", FLOAT_FMT % info.overfit_gap])
        fused = []
        offset = 0
        for vid in eval_vids:
            n = models[0][vid].n_frames
            fused.append(
                FrameTrack(
                    vid,
                    config.fps_target,
                    fused_arr[offset : offset + n],
                    kind=config.track_kind,
                )
            )
            offset += n
    if matrix is not None:
        write_fusion_matrix(
            run_dir / "fusion_matrix.csv",
            matrix,
            model_names=names,
            output_names=[f"c{k}" for k in range(n_outputs)],
        )
    write_track_csv(run_dir / "fused.csv", fused)


def stage_postprocess(config: PipelineConfig, run_dir: Path) -> None:
    """Interpolate fused scores to the truth timeline, smooth, and emit labels."""
    fused = read_track_csv(
        _require_file(run_dir / "fused.csv", "fuse stage output"),
        fps=config.fps_target,
        kind=config.track_kind,
    )
    truth = _load_truth_tracks(config)
    smoothing = SmoothingSpec(window_seconds=config.postprocess.smooth_seconds)
    vids = sorted(fused)
    missing = [v for v in vids if v not in truth]
    if missing:
        raise AlignmentError(f"postprocess stage: no labels for video(s) {missing}")

    def one(vid: str) -> tuple[str, dict[int, np.ndarray]]:
        target = truth[vid]
        track = interpolate_to(fused[vid], target.fps, target.n_frames)
        track = hamming_smooth(track, smoothing)
        origin = target.frame_index_origin
        if config.task == "expr":
            labels = track.values.argmax(axis=1)
            rows = {origin + t: np.array([float(labels[t])]) for t in range(len(labels))}
        else:
            rows = {origin + t: track.values[t] for t in range(track.n_frames)}
        return vid, rows

    results = _map_ordered(one, vids, config.workers)
    write_label_csv(run_dir / "predictions.csv", dict(results), task=config.task)


def evaluate_files(pred_csv: str | Path, truth_csv: str | Path, task: str) -> EvalReport:
    """Join predictions with truth on (video_id, frame) and score them.

    Rows invalid for the task are dropped on read (so truth frames with
    out-of-range annotations are ignored); the join keeps only keys
    present on both sides and pools all frames before computing the
    task's metric suite.
    """
    if task not in ("expr", "va"):
        raise ConfigError(f"task must be 'expr' or 'va', got {task!r}")
    pred = _read_labels_checked(_require_file(pred_csv, "predictions file"), task)
    truth = _read_labels_checked(_require_file(truth_csv, "truth file"), task)
    t_rows, p_rows = [], []
    for vid in sorted(set(pred) & set(truth)):
        for frame in sorted(set(pred[vid]) & set(truth[vid])):
            t_rows.append(truth[vid][frame])
            p_rows.append(pred[vid][frame])
    if not t_rows:
        raise AlignmentError(
            "evaluate stage: predictions and truth share no (video_id, frame) keys"
        )
    t = np.array(t_rows)
    p = np.array(p_rows)
    if task == "expr":
        return classification_report(
            t[:, 0].astype(np.int64), p[:, 0].astype(np.int64), n_classes=N_EXPR_CLASSES
        )
    return va_report(t, p)


def stage_evaluate(config: PipelineConfig, run_dir: Path) -> EvalReport:
    report = evaluate_files(
        _require_file(run_dir / "predictions.csv", "postprocess stage output"),
        _require_file(config.labels, "labels file"),
        config.task,
    )
    write_report(report, run_dir / "report.txt", run_dir / "report.csv")
    return report


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    report: EvalReport
    run_dir: Path
    manifest: dict


_MANIFEST_EXCLUDED = ("manifest.json", "timings.json")


def _build_manifest(config: PipelineConfig, run_dir: Path) -> dict:
    inputs = {}
    for path_s in (
        config.embeddings,
        config.labels,
        config.vad,
        *config.base_predictions,
    ):
        if path_s and Path(path_s).exists():
            inputs[str(path_s)] = _sha256_file(Path(path_s))
    outputs = {
        str(p.relative_to(run_dir)): _sha256_file(p)
        for p in sorted(run_dir.rglob("*"))
        if p.is_file() and p.name not in _MANIFEST_EXCLUDED
    }
    listing = "\n".join(f"{rel}:{digest}" for rel, digest in sorted(outputs.items()))
    return {
        "config_hash": config_hash(config),
        "seed": config.seed,
        "task": config.task,
        "inputs": inputs,
        "outputs": outputs,
        "outputs_hash": hashlib.sha256(listing.encode("utf-8")).hexdigest(),
    }


def run_pipeline(config: PipelineConfig) -> RunResult:
    """Execute every stage in order and write the run manifest."""
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(config_to_dict(config), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    stages: list[tuple[str, Callable]] = []
    if config.kelm.enabled:
        # the windowing/feature stages exist to feed the KELM; a
        # fusion-only run starts straight from the base prediction files
        stages += [
            ("window", stage_window),
            ("features", stage_features),
            ("train-kelm", stage_train_kelm),
            ("predict-kelm", stage_predict_kelm),
        ]
    stages += [
        (f"fuse-{config.fusion.method}", stage_fuse),
        ("postprocess", stage_postprocess),
    ]
    timings: dict[str, float] = {}
    report: EvalReport | None = None
    for name, fn in stages:
        t0 = time.perf_counter()
        fn(config, run_dir)
        timings[name] = time.perf_counter() - t0
    t0 = time.perf_counter()
    report = stage_evaluate(config, run_dir)
    timings["evaluate"] = time.perf_counter() - t0
    manifest = _build_manifest(config, run_dir)
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (run_dir / "timings.json").write_text(
        json.dumps({k: round(v, 3) for k, v in timings.items()}, indent=2) + "\n",
        encoding="utf-8",
    )
    return RunResult(report=report, run_dir=run_dir, manifest=manifest)
