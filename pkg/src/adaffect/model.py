"""Shared domain types, the dataset manifest and frame sampling."""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

FRAME_STEP_S = 3
SCREEN = (1366, 768)
GAZE_RATE_HZ = 60
VALENCE_SCALE = (-2, -1, 0, 1, 2)
AROUSAL_SCALE = (0, 1, 2, 3, 4)


class ManifestError(ValueError):
    """Manifest does not match the schema; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class IntegrityError(ValueError):
    pass


class MissingDataError(FileNotFoundError):
    pass


class Level(str, enum.Enum):
    HIGH = "High"
    LOW = "Low"


class Affect(str, enum.Enum):
    VALENCE = "valence"
    AROUSAL = "arousal"


class ChannelKind(str, enum.Enum):
    # declaration order is the report row order
    VIDEO = "Video"
    CONSTANT_BLUR = "ConstantBlur"
    ADAPTIVE_BLUR = "AdaptiveBlur"
    OBJECT_CROPS = "ObjectCrops"
    OBJECT_RETAINED = "ObjectRetained"
    FC8 = "Fc8"
    GIST = "Gist"
    EYE_ROI = "EyeRoi"
    EYE_HIST = "EyeHist"
    EYE_ROI_CONTEXT_BLUR = "EyeRoiContextBlur"

    @property
    def video_level(self) -> bool:
        return self is ChannelKind.EYE_HIST


@dataclass(frozen=True)
class AffectTask:
    dimension: Affect
    positive_class: Level = Level.HIGH


@dataclass(frozen=True)
class VideoRecord:
    id: str
    duration_s: float
    frame_width: int
    frame_height: int
    frame_dir: str
    expert_valence: Level
    expert_arousal: Level

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ManifestError("duration_s", f"must be > 0, got {self.duration_s}")
        if self.frame_width < 1 or self.frame_height < 1:
            raise ManifestError("frame_width", "frame dimensions must be >= 1")

    def label(self, dimension: Affect) -> Level:
        return self.expert_valence if dimension is Affect.VALENCE else self.expert_arousal

    @property
    def n_frames(self) -> int:
        return frame_count(self.duration_s)


@dataclass(frozen=True, eq=False)
class FrameSample:
    video_id: str
    index: int
    timestamp_s: float
    pixels: np.ndarray

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Raters x items grids; ``nan`` marks a missing rating."""

    raters: tuple
    items: tuple
    valence: np.ndarray
    arousal: np.ndarray

    def __post_init__(self):
        shape = (len(self.raters), len(self.items))
        for name, grid, scale in (("valence", self.valence, VALENCE_SCALE),
                                  ("arousal", self.arousal, AROUSAL_SCALE)):
            if grid.shape != shape:
                raise ManifestError(f"ratings.{name}", f"grid shape {grid.shape} != {shape}")
            present = grid[~np.isnan(grid)]
            bad = present[~np.isin(present, scale)]
            if bad.size:
                raise ManifestError(f"ratings.{name}", f"value {bad[0]:g} outside scale {scale}")

    def grid(self, dimension: Affect) -> np.ndarray:
        return self.valence if dimension is Affect.VALENCE else self.arousal

    def __eq__(self, other):
        if not isinstance(other, RatingMatrix):
            return NotImplemented
        return (self.raters == other.raters and self.items == other.items
                and np.array_equal(self.valence, other.valence, equal_nan=True)
                and np.array_equal(self.arousal, other.arousal, equal_nan=True))


@dataclass(frozen=True)
class GazeRef:
    rater_id: str
    video_id: str
    path: str


@dataclass(frozen=True)
class Sidecars:
    detections: Optional[str] = None
    features: Optional[str] = None


@dataclass(frozen=True)
class DatasetManifest:
    videos: tuple
    ratings: Optional[RatingMatrix] = None
    gaze: tuple = ()
    sidecars: Sidecars = field(default_factory=Sidecars)
    root: str = field(default=".", compare=False)

    def video(self, video_id: str) -> VideoRecord:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(video_id)

    @property
    def video_ids(self) -> list:
        return [v.id for v in self.videos]

    @property
    def raters(self) -> list:
        """Rater roster: rating-matrix order, then any gaze-only raters."""
        roster = list(self.ratings.raters) if self.ratings is not None else []
        for g in self.gaze:
            if g.rater_id not in roster:
                roster.append(g.rater_id)
        return roster

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.root) / p

    def gaze_for(self, video_id: str) -> list:
        return [g for g in self.gaze if g.video_id == video_id]

    def total_frames(self) -> int:
        return sum(v.n_frames for v in self.videos)


def frame_count(duration_s: float) -> int:
    """Frames sampled at t = 0, 3, 6, ... strictly before ``duration_s``."""
    return math.ceil(duration_s / FRAME_STEP_S)


def _require(obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ManifestError(f"{where}.{key}" if where else key, "missing")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise ManifestError(f"{where}.{key}" if where else key,
                            f"expected {kind.__name__ if isinstance(kind, type) else kind}")
    return value


def _level(value, where):
    try:
        return Level(value)
    except ValueError:
        raise ManifestError(where, f"expected 'High' or 'Low', got {value!r}") from None


def _grid(rows, where, shape):
    if not isinstance(rows, list) or len(rows) != shape[0]:
        raise ManifestError(where, f"expected {shape[0]} rows")
    out = np.full(shape, np.nan)
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != shape[1]:
            raise ManifestError(where, f"row {i} must have {shape[1]} entries")
        for j, v in enumerate(row):
            if v is None:
                continue
            if isinstance(v, bool) or not isinstance(v, int):
                if not (isinstance(v, float) and v.is_integer()):
                    raise ManifestError(where, f"non-integer rating {v!r}")
            out[i, j] = v
    return out


def parse_manifest(doc: dict, root: str = ".") -> DatasetManifest:
    videos = []
    for k, v in enumerate(_require(doc, "videos", "", list)):
        where = f"videos[{k}]"
        try:
            rec = VideoRecord(
                id=str(_require(v, "id", where)),
                duration_s=float(_require(v, "duration_s", where, (int, float))),
                frame_width=int(_require(v, "frame_width", where, int)),
                frame_height=int(_require(v, "frame_height", where, int)),
                frame_dir=str(_require(v, "frame_dir", where, str)),
                expert_valence=_level(_require(v, "expert_valence", where), f"{where}.expert_valence"),
                expert_arousal=_level(_require(v, "expert_arousal", where), f"{where}.expert_arousal"),
            )
        except ManifestError as e:
            if e.field.startswith(where):
                raise
            raise ManifestError(f"{where}.{e.field}", str(e).split(": ", 1)[1]) from None
        videos.append(rec)
    ids = [v.id for v in videos]
    if len(set(ids)) != len(ids):
        raise IntegrityError("duplicate video ids in manifest")

    ratings = None
    if doc.get("ratings") is not None:
        r = doc["ratings"]
        raters = tuple(str(x) for x in _require(r, "raters", "ratings", list))
        items = tuple(str(x) for x in _require(r, "items", "ratings", list))
        shape = (len(raters), len(items))
        ratings = RatingMatrix(
            raters=raters, items=items,
            valence=_grid(_require(r, "valence", "ratings"), "ratings.valence", shape),
            arousal=_grid(_require(r, "arousal", "ratings"), "ratings.arousal", shape),
        )
        for item in items:
            if item not in ids:
                raise IntegrityError(f"ratings reference unknown video {item!r}")

    gaze = []
    for k, g in enumerate(doc.get("gaze", []) or []):
        where = f"gaze[{k}]"
        ref = GazeRef(str(_require(g, "rater_id", where)), str(_require(g, "video_id", where)),
                      str(_require(g, "path", where, str)))
        if ref.video_id not in ids:
            raise IntegrityError(f"gaze trace {ref.path!r} names unknown video {ref.video_id!r}")
        gaze.append(ref)

    sc = doc.get("sidecars") or {}
    if not isinstance(sc, dict):
        raise ManifestError("sidecars", "expected an object")
    sidecars = Sidecars(detections=sc.get("detections"), features=sc.get("features"))
    return DatasetManifest(tuple(videos), ratings, tuple(gaze), sidecars, root=str(root))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ManifestError("<document>", f"invalid JSON: {e}") from None
    return parse_manifest(doc, root=str(path.parent))


def _grid_to_json(grid):
    return [[None if np.isnan(v) else int(v) for v in row] for row in grid]


def manifest_to_dict(m: DatasetManifest) -> dict:
    doc = {
        "videos": [
            {"id": v.id, "duration_s": v.duration_s, "frame_width": v.frame_width,
             "frame_height": v.frame_height, "frame_dir": v.frame_dir,
             "expert_valence": v.expert_valence.value, "expert_arousal": v.expert_arousal.value}
            for v in m.videos
        ],
        "gaze": [{"rater_id": g.rater_id, "video_id": g.video_id, "path": g.path} for g in m.gaze],
        "sidecars": {"detections": m.sidecars.detections, "features": m.sidecars.features},
    }
    if m.ratings is not None:
        doc["ratings"] = {
            "raters": list(m.ratings.raters), "items": list(m.ratings.items),
            "valence": _grid_to_json(m.ratings.valence), "arousal": _grid_to_json(m.ratings.arousal),
        }
    return doc


def save_manifest(m: DatasetManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest_to_dict(m), fh, indent=1)


# -- frames ---------------------------------------------------------------

def frame_filename(t_ms: int) -> str:
    return f"{int(t_ms):09d}.png"


def list_frame_files(frame_dir) -> list:
    """(timestamp_ms, path) pairs sorted by time; files without an integer stem are ignored."""
    out = []
    if not os.path.isdir(frame_dir):
        return out
    for name in os.listdir(frame_dir):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"):
            continue
        if stem.isdigit():
            out.append((int(stem), os.path.join(frame_dir, name)))
    out.sort()
    return out


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_image(path, pixels: np.ndarray) -> None:
    """Lossless PNG write, atomic via rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    mode = "L" if pixels.ndim == 2 else "RGB"
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode=mode).save(tmp, format="PNG")
    os.replace(tmp, path)


def sample_frames(video: VideoRecord, root=".") -> list:
    """Pick one frame every three seconds from the video's frame directory.

    For each nominal time ``3 * i`` the stored frame whose filename timestamp
    is nearest (earlier on ties) is decoded. The returned samples carry the
    nominal timestamp.
    """
    frame_dir = Path(video.frame_dir)
    if not frame_dir.is_absolute():
        frame_dir = Path(root) / frame_dir
    files = list_frame_files(frame_dir)
    if not files:
        raise MissingDataError(f"no frames for video {video.id!r} in {frame_dir}")
    stamps = np.array([t for t, _ in files])
    out = []
    for i in range(video.n_frames):
        target = i * FRAME_STEP_S * 1000
        j = int(np.argmin(np.abs(stamps - target)))
        out.append(FrameSample(video.id, i, float(i * FRAME_STEP_S), read_image(files[j][1])))
    return out


def frame_times(duration_s: float) -> np.ndarray:
    return np.arange(frame_count(duration_s), dtype=float) * FRAME_STEP_S
