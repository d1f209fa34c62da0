"""Stage orchestration and the ``adaffect`` command line.

Stages talk to each other only through files under the output directory::

    channels/<Channel>/<video>/<frame>[_cropN].png (+ .json meta)
    gaze/fixations/<rater>.csv, gaze/saccades/<rater>.csv, gaze/heatmaps/<video>/<frame>.png
    features/<Channel>/<video>.bin (+ .idx)
    results.csv, results.json, run_meta.json, agreement.json, report.md

Exit codes: 0 full success, 2 partial (named skips), 1 failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .channels import (MAX_BLUR_ITERATIONS, WARM_THRESHOLD, BlurNonConvergenceError, ChannelImage, adaptive_blur,
                       constant_blur, eye_roi, eye_roi_context_blur, object_crops, object_retained,
                       write_channel_image)
from .detector import DEFAULT_THRESHOLD, MissingSidecarError, file_detector
from .evaluation import CvPlan, emit_report, parse_report_csv, run_protocol
from .features import (EmptyDesignError, FeatureFormatError, Window, assemble_design_matrix, gist,
                       load_deep_features, write_feature_sidecar)
from .gaze import (DISPERSION_PX, FIXATION_MIN_MS, HEAT_CELL_PX, MAX_GAP_MS, SPATIAL_PATCH, GazeFileError,
                   build_heatmap, derive_saccades, detect_fixations, gaze_histogram_features, heatmap_image,
                   map_to_frame, read_gaze_csv, write_fixations_csv, write_saccades_csv)
from .learners import CLASSIFIERS, GRID, HyperGrid
from .model import (SCREEN, Affect, AffectTask, ChannelKind, DatasetManifest, load_manifest, read_image,
                    sample_frames, write_image)
from .stats import agreement_report

log = logging.getLogger("adaffect")

EXIT_OK, EXIT_FAIL, EXIT_PARTIAL = 0, 1, 2

SYNTH_CHANNELS = (ChannelKind.CONSTANT_BLUR, ChannelKind.ADAPTIVE_BLUR, ChannelKind.OBJECT_CROPS,
                  ChannelKind.OBJECT_RETAINED)
DETECTOR_CHANNELS = (ChannelKind.ADAPTIVE_BLUR, ChannelKind.OBJECT_CROPS, ChannelKind.OBJECT_RETAINED)
GAZE_CHANNELS = (ChannelKind.EYE_ROI, ChannelKind.EYE_ROI_CONTEXT_BLUR)
# image channels whose deep features may be stood in for by a Gist descriptor
IMAGE_CHANNELS = (ChannelKind.VIDEO,) + SYNTH_CHANNELS + GAZE_CHANNELS


class StageError(RuntimeError):
    """A stage could not run at all; names the stage and the offending entity."""

    def __init__(self, stage: str, entity: str, message: str):
        super().__init__(f"[{stage}] {entity}: {message}")
        self.stage = stage
        self.entity = entity


@dataclass
class RunConfig:
    manifest: Optional[str] = None
    out: str = "out"
    channels: tuple = tuple(c.value for c in ChannelKind)
    classifiers: tuple = CLASSIFIERS
    seed: int = 0
    workers: int = 1
    windows: tuple = tuple(w.value for w in Window)
    tasks: tuple = tuple(a.value for a in Affect)
    repetitions: int = 10
    folds: int = 5
    inner_folds: int = 5
    aggregate: str = "frames"
    spread: str = "folds"
    stratify: bool = True
    standardize: bool = True
    grid_C: tuple = GRID
    grid_gamma: tuple = GRID
    # gaze
    dispersion_px: float = DISPERSION_PX
    fixation_min_ms: float = FIXATION_MIN_MS
    max_gap_ms: float = MAX_GAP_MS
    warm_threshold: float = WARM_THRESHOLD
    heat_cell_px: float = HEAT_CELL_PX
    heat_source: str = "samples"
    spatial_patch: tuple = SPATIAL_PATCH
    screen: tuple = SCREEN
    # channels
    blur_mode: str = "auto"
    max_blur_iterations: int = MAX_BLUR_ITERATIONS
    confidence_threshold: float = DEFAULT_THRESHOLD
    # descriptor computed for image channels lacking external deep-feature sidecars; None disables
    standin: Optional[str] = "gist-raw"

    def __post_init__(self):
        for name in ("channels", "classifiers", "windows", "tasks", "grid_C", "grid_gamma",
                     "spatial_patch", "screen"):
            v = getattr(self, name)
            if isinstance(v, str):
                v = [s.strip() for s in v.split(",") if s.strip()]
            setattr(self, name, tuple(v))
        self.channels = tuple(ChannelKind(c).value for c in self.channels)
        self.windows = tuple(Window(w).value for w in self.windows)
        self.tasks = tuple(Affect(t).value for t in self.tasks)
        unknown = set(self.classifiers) - set(CLASSIFIERS)
        if unknown:
            raise ValueError(f"unknown classifiers {sorted(unknown)}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def channel_kinds(self) -> list:
        return [ChannelKind(c) for c in self.channels]

    @property
    def plan(self) -> CvPlan:
        return CvPlan(self.repetitions, self.folds, self.seed, True, self.inner_folds, self.aggregate,
                      self.spread, self.stratify)

    @property
    def grid(self) -> HyperGrid:
        return HyperGrid(tuple(float(c) for c in self.grid_C), tuple(float(g) for g in self.grid_gamma))

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def subset(self, *names) -> dict:
        d = self.to_dict()
        return {n: d[n] for n in names}

    @classmethod
    def from_file(cls, path, **flags) -> "RunConfig":
        """Flags first, then every key of the JSON config file on top."""
        with open(path) as fh:
            doc = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"{path}: unknown config keys {sorted(extra)}")
        return cls(**{**flags, **doc})


@dataclass
class StageResult:
    stage: str
    skipped: list = field(default_factory=list)  # [(entity, reason)]
    summary: dict = field(default_factory=dict)
    cached: bool = False

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.skipped else EXIT_OK

    def skip(self, entity: str, reason: str) -> None:
        log.warning("[%s] skipped %s: %s", self.stage, entity, reason)
        self.skipped.append((entity, reason))


# -- file plumbing ---------------------------------------------------------------

def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _sha(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _tree(*roots) -> list:
    files = []
    for r in roots:
        if r is None:
            continue
        r = Path(r)
        if r.is_file():
            files.append(r)
        elif r.is_dir():
            files.extend(p for p in sorted(r.rglob("*")) if p.is_file() and not p.name.endswith(".tmp"))
    return files


class StageCache:
    """Content-hash keyed record of a stage's last completed run.

    The key digests the stage name, a config subset and the bytes of every
    input file. A hit also requires every recorded output to still hold the
    recorded bytes, so a hit never leaves different artifacts behind than a
    fresh run would.
    """

    def __init__(self, out_dir):
        self.dir = Path(out_dir) / ".cache"

    @staticmethod
    def key(stage: str, config: dict, inputs: Sequence[Path]) -> str:
        h = hashlib.sha256()
        h.update(stage.encode())
        h.update(json.dumps(config, sort_keys=True).encode())
        for p in inputs:
            h.update(str(p).encode())
            h.update(_sha(p).encode())
        return h.hexdigest()

    def lookup(self, stage: str, key: str) -> Optional[dict]:
        path = self.dir / f"{stage}.json"
        if not path.exists():
            return None
        with open(path) as fh:
            entry = json.load(fh)
        if entry.get("key") != key:
            return None
        for out, digest in entry["outputs"].items():
            p = Path(out)
            if not p.is_file() or _sha(p) != digest:
                return None
        return entry

    def store(self, stage: str, key: str, outputs: Sequence[Path], result: StageResult) -> None:
        _write_json(self.dir / f"{stage}.json", {
            "key": key, "outputs": {str(p): _sha(p) for p in outputs},
            "skipped": [list(s) for s in result.skipped], "summary": result.summary})


def _cached_run(stage: str, config: RunConfig, config_keys: Sequence[str], inputs, outputs_of, body):
    """Run ``body() -> StageResult`` unless the cache holds an identical run."""
    cache = StageCache(config.out)
    key = cache.key(stage, config.subset(*config_keys), inputs)
    hit = cache.lookup(stage, key)
    if hit is not None:
        log.info("[%s] cache hit, nothing to do", stage)
        return StageResult(stage, [tuple(s) for s in hit["skipped"]], hit["summary"], cached=True)
    result = body()
    cache.store(stage, key, outputs_of(), result)
    return result


def _manifest(config: RunConfig, stage: str) -> DatasetManifest:
    if not config.manifest:
        raise StageError(stage, "manifest", "no manifest path given")
    if not Path(config.manifest).is_file():
        raise StageError(stage, "manifest", f"{config.manifest} does not exist")
    return load_manifest(config.manifest)


def _map(config: RunConfig, fn, items) -> list:
    if config.workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(config.workers) as pool:
        return list(pool.map(fn, items))


def _frame_inputs(m: DatasetManifest) -> list:
    return _tree(*(m.resolve(v.frame_dir) for v in m.videos))


# -- synth ----------------------------------------------------------------------

def cmd_synth(config: RunConfig, detector=None) -> StageResult:
    """Materialise the content-driven blur and object channels.

    ``detector`` replaces the file-backed handle built from the manifest's
    detection sidecars.
    """
    m = _manifest(config, "synth")
    wanted = [c for c in config.channel_kinds if c in SYNTH_CHANNELS]
    det_dir = m.resolve(m.sidecars.detections)
    inputs = [Path(config.manifest)] + _frame_inputs(m) + _tree(det_dir)
    root = Path(config.out) / "channels"

    def body():
        result = StageResult("synth")
        channels = list(wanted)
        handle = detector
        if handle is None and any(c in DETECTOR_CHANNELS for c in channels):
            if det_dir is None or not det_dir.is_dir():
                for c in [c for c in channels if c in DETECTOR_CHANNELS]:
                    result.skip(c.value, f"detection sidecars directory missing ({det_dir})")
                    channels.remove(c)
            else:
                handle = file_detector(det_dir, config.confidence_threshold)

        def work(video):
            done = {c: [] for c in channels}
            errors = []
            for frame in sample_frames(video, m.root):
                cb = None
                for c in channels:
                    try:
                        if c is ChannelKind.CONSTANT_BLUR:
                            cb = constant_blur(frame, config.blur_mode)
                            images = [cb]
                        elif c is ChannelKind.ADAPTIVE_BLUR:
                            try:
                                images = [adaptive_blur(frame, handle, config.max_blur_iterations,
                                                        config.blur_mode)]
                            except BlurNonConvergenceError as e:
                                log.warning("[synth] %s", e)
                                images = [ChannelImage((video.id, frame.index), c, e.image,
                                                       {"iterations": e.iterations, "converged": False})]
                        else:
                            dets = handle.detect((video.id, frame.index, 0))
                            images = (object_crops(frame, dets) if c is ChannelKind.OBJECT_CROPS
                                      else [object_retained(frame, dets)])
                    except MissingSidecarError as e:
                        errors.append((f"{c.value}/{video.id}", f"missing detections: {e}"))
                        continue
                    for img in images:
                        write_channel_image(root, img)
                    done[c].append([img.meta for img in images])
            return done, errors

        per_video = _map(config, work, m.videos)
        failed = set()
        for done, errors in per_video:
            for entity, reason in errors:
                if entity not in failed:
                    failed.add(entity)
                    result.skip(entity, reason)
        for c in channels:
            metas = [fm for done, _ in per_video for fm in done[c]]
            summary = {"frames": len(metas), "images": sum(len(fm) for fm in metas)}
            if c is ChannelKind.ADAPTIVE_BLUR:
                hist = {}
                for fm in metas:
                    for meta in fm:
                        hist[str(meta["iterations"])] = hist.get(str(meta["iterations"]), 0) + 1
                summary["iterations"] = dict(sorted(hist.items(), key=lambda kv: int(kv[0])))
                summary["nonconverged"] = sum(1 for fm in metas for meta in fm if meta.get("converged") is False)
            result.summary[c.value] = summary
            _write_json(root / c.value / "summary.json", summary)
        return result

    if detector is not None:  # scripted handles are not part of the cache key
        return body()
    return _cached_run("synth", config, ["channels", "blur_mode", "max_blur_iterations",
                                         "confidence_threshold"],
                       inputs, lambda: _tree(*(root / c.value for c in wanted)), body)


# -- gaze -----------------------------------------------------------------------

def cmd_gaze(config: RunConfig) -> StageResult:
    """Fixations, saccades, frame heatmaps, gaze channels and EyeHist features."""
    m = _manifest(config, "gaze")
    out = Path(config.out)
    inputs = [Path(config.manifest)] + _frame_inputs(m) + [m.resolve(g.path) for g in m.gaze
                                                           if m.resolve(g.path).is_file()]
    keys = ["channels", "dispersion_px", "fixation_min_ms", "max_gap_ms", "warm_threshold",
            "heat_cell_px", "heat_source", "spatial_patch", "screen", "blur_mode"]

    def body():
        result = StageResult("gaze")
        screen = tuple(config.screen)
        traces, malformed = {}, {}
        for ref in m.gaze:
            entity = f"{ref.rater_id}/{ref.video_id}"
            path = m.resolve(ref.path)
            if not path.is_file():
                result.skip(entity, f"gaze file {path} missing")
                continue
            try:
                trace, n_bad = read_gaze_csv(path, ref.rater_id, ref.video_id, screen)
            except GazeFileError as e:
                result.skip(entity, str(e))
                continue
            if n_bad:
                malformed[entity] = n_bad
            traces[(ref.rater_id, ref.video_id)] = trace

        def segment(key):
            v = traces[key].valid()
            fix = detect_fixations(v, config.fixation_min_ms, config.dispersion_px, config.max_gap_ms)
            return key, fix, derive_saccades(fix)

        segmented = {k: (f, s) for k, f, s in _map(config, segment, sorted(traces))}
        fix_rows, sac_rows = {}, {}
        for (rater, video), (fix, sac) in segmented.items():
            fix_rows.setdefault(rater, []).extend((rater, video, f) for f in fix)
            sac_rows.setdefault(rater, []).extend((rater, video, s) for s in sac)
        for rater in sorted({r for r, _ in traces}):
            (out / "gaze" / "fixations").mkdir(parents=True, exist_ok=True)
            (out / "gaze" / "saccades").mkdir(parents=True, exist_ok=True)
            write_fixations_csv(out / "gaze" / "fixations" / f"{rater}.csv", fix_rows.get(rater, []))
            write_saccades_csv(out / "gaze" / "saccades" / f"{rater}.csv", sac_rows.get(rater, []))

        roster = m.raters
        want = set(config.channel_kinds)

        def per_video(video):
            vt = [traces[(r, video.id)] for r in roster if (r, video.id) in traces]
            n_roi = 0
            for frame in sample_frames(video, m.root):
                heat = build_heatmap(vt, frame.timestamp_s, screen, config.heat_cell_px,
                                     source=config.heat_source)
                fheat = map_to_frame(heat, screen, (frame.width, frame.height))
                write_image(out / "gaze" / "heatmaps" / video.id / f"{frame.index}.png", heatmap_image(fheat))
                if ChannelKind.EYE_ROI in want:
                    write_channel_image(out / "channels", eye_roi(frame, fheat, config.warm_threshold))
                if ChannelKind.EYE_ROI_CONTEXT_BLUR in want:
                    img = eye_roi_context_blur(frame, fheat, config.warm_threshold, config.blur_mode)
                    write_channel_image(out / "channels", img)
                    n_roi += img.meta["roi_pixels"] > 0
            if ChannelKind.EYE_HIST in want:
                per_rater = {r: segmented[(r, video.id)] for r in roster if (r, video.id) in segmented}
                feat = gaze_histogram_features(per_rater, roster, screen, tuple(config.spatial_patch))
                write_feature_sidecar(out / "features", ChannelKind.EYE_HIST, video.id, [-1], feat.values[None])
            return video.id, len(vt), n_roi

        stats = _map(config, per_video, m.videos)
        result.summary = {
            "traces": len(traces), "malformed_rows": malformed,
            "fixations": sum(len(f) for f, _ in segmented.values()),
            "saccades": sum(len(s) for _, s in segmented.values()),
            "videos": {vid: {"raters": n, "frames_with_roi": k} for vid, n, k in stats},
        }
        _write_json(out / "gaze" / "summary.json", result.summary)
        return result

    outputs = lambda: _tree(out / "gaze", out / "features" / ChannelKind.EYE_HIST.value,
                            *(out / "channels" / c.value for c in GAZE_CHANNELS))
    return _cached_run("gaze", config, keys, inputs, outputs, body)


# -- features -------------------------------------------------------------------

def _external_features(m: DatasetManifest) -> Optional[Path]:
    d = m.resolve(m.sidecars.features)
    return d if d is not None and d.is_dir() else None


def _channel_images(out: Path, channel: ChannelKind, video_id: str) -> list:
    """``[(frame_index, path)]`` of a synthesised channel, in frame then crop order."""
    d = out / "channels" / channel.value / video_id
    items = []
    for p in d.glob("*.png"):
        stem = p.stem
        fi, _, crop = stem.partition("_crop")
        items.append((int(fi), int(crop) if crop else -1, p))
    return [(fi, p) for fi, _, p in sorted(items)]


def cmd_features(config: RunConfig) -> StageResult:
    """Gist on raw frames, plus Gist stand-ins for image channels without deep features."""
    m = _manifest(config, "features")
    out = Path(config.out)
    ext = _external_features(m)
    targets = []
    for c in config.channel_kinds:
        if c is ChannelKind.GIST or (c in IMAGE_CHANNELS and config.standin):
            targets.append(c)
    inputs = [Path(config.manifest)] + _frame_inputs(m) + _tree(
        *(out / "channels" / c.value for c in targets), *([ext] if ext else []))

    def body():
        result = StageResult("features")
        for c in targets:
            if c is not ChannelKind.GIST and ext is not None and (ext / c.value).is_dir():
                result.summary[c.value] = {"source": "external"}
                continue
            if c in SYNTH_CHANNELS + GAZE_CHANNELS and not (out / "channels" / c.value).is_dir():
                result.skip(c.value, "no channel images (run synth/gaze first)")
                continue
            normalize = c is ChannelKind.GIST
            descriptor = "gist" if normalize else config.standin

            def work(video, c=c, normalize=normalize, descriptor=descriptor):
                if c in (ChannelKind.GIST, ChannelKind.VIDEO):
                    items = [(f.index, f.pixels) for f in sample_frames(video, m.root)]
                else:
                    items = [(fi, read_image(p)) for fi, p in _channel_images(out, c, video.id)]
                if not items:
                    result.skip(f"{c.value}/{video.id}", "no channel images")
                rows = np.array([gist(px, normalize=normalize) for _, px in items])
                write_feature_sidecar(out / "features", c, video.id, [fi for fi, _ in items], rows, descriptor)
                return len(items)

            n = _map(config, work, m.videos)
            result.summary[c.value] = {"source": descriptor, "rows": int(sum(n))}
        return result

    keys = ["channels", "standin"]
    return _cached_run("features", config, keys, inputs,
                       lambda: _tree(*(out / "features" / c.value for c in targets)), body)


# -- eval -----------------------------------------------------------------------

def feature_source(config: RunConfig, m: DatasetManifest, channel: ChannelKind) -> Optional[Path]:
    """Directory holding the channel's features: this run's output, else the manifest's sidecars."""
    own = Path(config.out) / "features"
    if (own / channel.value).is_dir():
        return own
    ext = _external_features(m)
    if ext is not None and (ext / channel.value).is_dir():
        return ext
    return None


def build_designs(config: RunConfig, m: DatasetManifest) -> dict:
    designs = {}
    for c in config.channel_kinds:
        src = feature_source(config, m, c)
        feats, err = None, None
        if src is None:
            err = FileNotFoundError(f"no features for {c.value}")
        else:
            try:
                feats = load_deep_features(src, c, m)
            except FeatureFormatError as e:
                err = e
        for t in config.tasks:
            for w in config.windows:
                key = (c, Affect(t), Window(w))
                if err is not None:
                    designs[key] = err
                    continue
                try:
                    designs[key] = assemble_design_matrix(m, c, Window(w), AffectTask(Affect(t)), feats)
                except EmptyDesignError as e:
                    designs[key] = e
    return designs


def cmd_eval(config: RunConfig, classifiers=None) -> StageResult:
    """Run the CV protocol and write ``results.csv``, ``results.json`` and ``run_meta.json``.

    ``classifiers`` overrides ``config.classifiers`` with objects exposing
    ``name`` and ``fit(X, y, groups, seed)``.
    """
    m = _manifest(config, "eval")
    out = Path(config.out)
    srcs = {feature_source(config, m, c) for c in config.channel_kinds} - {None}
    inputs = [Path(config.manifest)] + _tree(*(s / c.value for s in srcs for c in config.channel_kinds))
    keys = ["channels", "classifiers", "seed", "windows", "tasks", "repetitions", "folds", "inner_folds",
            "aggregate", "spread", "stratify", "standardize", "grid_C", "grid_gamma"]

    def body():
        result = StageResult("eval")
        t0 = time.perf_counter()
        designs = build_designs(config, m)
        for (c, t, w), d in designs.items():
            if isinstance(d, Exception):
                result.skip(f"{c.value}/{t.value}/{w.value}", str(d))
        report = run_protocol(designs, classifiers or config.classifiers, config.plan, config.grid,
                              config.standardize)
        paths = emit_report(report, out)
        result.summary = {"cells": len(report.cells),
                          "available": sum(1 for c in report.cells.values() if c.available)}
        _write_json(out / "run_meta.json", {
            "config": config.to_dict(), "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "elapsed_s": round(time.perf_counter() - t0, 3),
            "outputs": [p.name for p in paths], "skipped": [list(s) for s in result.skipped]})
        return result

    if classifiers is not None:
        return body()
    return _cached_run("eval", config, keys, inputs,
                       lambda: [out / "results.csv", out / "results.json"], body)


# -- stats / report ---------------------------------------------------------------

def cmd_stats(config: RunConfig) -> StageResult:
    m = _manifest(config, "stats")
    if m.ratings is None:
        raise StageError("stats", "ratings", "manifest has no rating matrix")
    result = StageResult("stats")
    items = list(m.ratings.items)
    known = set(m.video_ids)
    experts = None
    if all(i in known for i in items):
        experts = {d.value: [m.video(i).label(d).value for i in items] for d in Affect}
    report = agreement_report(m.ratings, experts)
    for dim, block in report["kappa"].items():
        for scheme, v in block.items():
            if v["value"] is None:
                result.summary.setdefault("omitted", []).append(f"kappa/{dim}/{scheme}: {v['reason']}")
    _write_json(Path(config.out) / "agreement.json", report)
    return result


def render_report(csv_text: str) -> str:
    """Markdown table of mean +- std F1; the best window per task is bold."""
    rep = parse_report_csv(csv_text)
    rows = list(csv.DictReader(csv_text.splitlines()))
    head = ["Channel", "Classifier"] + [f"{t.value[:1].upper()} {w.value}" for t in Affect for w in Window]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for row in rows:
        cells = [row["channel"], row["classifier"]]
        for t in Affect:
            for w in Window:
                c = rep.cell(row["channel"], row["classifier"], t, w)
                if c.mean is None:
                    cells.append("NA")
                    continue
                s = f"{c.mean:.2f} ± {c.std:.2f}"
                best = row[f"{t.value}_{w.value.lower()}_best"] == "true"
                cells.append(f"**{s}**" if best else s)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(config: RunConfig) -> StageResult:
    path = Path(config.out) / "results.csv"
    if not path.is_file():
        raise StageError("report", str(path), "no results; run eval first")
    text = render_report(path.read_text())
    _write_text(Path(config.out) / "report.md", text)
    sys.stdout.write(text)
    return StageResult("report")


COMMANDS = {"synth": cmd_synth, "gaze": cmd_gaze, "features": cmd_features, "eval": cmd_eval,
            "stats": cmd_stats, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaffect", description="Ad affect recognition from frames and gaze.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--manifest")
        s.add_argument("--out", default="out")
        s.add_argument("--channels", help="comma-separated channel names")
        s.add_argument("--classifiers", help="comma-separated: LDA,LSVM,RSVM")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--window", action="append", help="All, L30 or L10; repeatable")
        s.add_argument("--config", help="JSON file; its keys override flags")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(ns) -> RunConfig:
    flags = {"manifest": ns.manifest, "out": ns.out, "seed": ns.seed, "workers": ns.workers}
    if ns.channels:
        flags["channels"] = ns.channels
    if ns.classifiers:
        flags["classifiers"] = ns.classifiers
    if ns.window:
        flags["windows"] = [w for arg in ns.window for w in arg.split(",")]
    if ns.config:
        return RunConfig.from_file(ns.config, **flags)
    return RunConfig(**flags)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(ns)
        result = COMMANDS[ns.command](config)
    except StageError as e:
        log.error("%s", e)
        return EXIT_FAIL
    except Exception as e:  # noqa: BLE001 - report any failure with the stage name
        log.error("[%s] failed: %s: %s", ns.command, type(e).__name__, e)
        return EXIT_FAIL
    for entity, reason in result.skipped:
        print(f"skipped {entity}: {reason}", file=sys.stderr)
    return result.exit_code


def main_exit() -> None:
    sys.exit(main())
