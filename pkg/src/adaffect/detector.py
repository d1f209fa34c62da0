"""Object-detection boundary.

Detections are produced offline by any external detector and shipped as one
JSON sidecar per video, keyed by ``(frame_index, blur_level)``. Blur level 0
is the raw frame; level ``k`` is the frame after ``k`` constant blurs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

N_CLASSES = 80
DEFAULT_THRESHOLD = 0.25


class MissingSidecarError(KeyError):
    """No detector output was recorded for the requested key."""


@dataclass(frozen=True)
class Detection:
    class_id: int
    bbox: tuple  # (x, y, w, h) in frame pixels
    confidence: float

    def __post_init__(self):
        if not 0 <= self.class_id < N_CLASSES:
            raise ValueError(f"class_id {self.class_id} outside [0, {N_CLASSES - 1}]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if len(self.bbox) != 4 or self.bbox[2] < 0 or self.bbox[3] < 0:
            raise ValueError(f"bad bbox {self.bbox}")

    def clamped(self, width: int, height: int) -> tuple:
        """Integer pixel box ``(x0, y0, x1, y1)`` clipped to the frame, half-open."""
        x, y, w, h = self.bbox
        x0 = int(max(0, min(width, round(x))))
        y0 = int(max(0, min(height, round(y))))
        x1 = int(max(0, min(width, round(x + w))))
        y1 = int(max(0, min(height, round(y + h))))
        return x0, y0, max(x0, x1), max(y0, y1)

    def to_dict(self) -> dict:
        x, y, w, h = self.bbox
        return {"class_id": self.class_id, "x": x, "y": y, "w": w, "h": h,
                "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Detection":
        return cls(int(d["class_id"]), (d["x"], d["y"], d["w"], d["h"]), float(d["confidence"]))


@dataclass(frozen=True)
class DetectionSidecar:
    video_id: str
    frames: Mapping  # (frame_index, blur_level) -> tuple of Detection

    def to_dict(self) -> dict:
        rows = []
        for (fi, level), dets in sorted(self.frames.items()):
            rows.append({"frame_index": fi, "blur_level": level,
                         "detections": [d.to_dict() for d in dets]})
        return {"video_id": self.video_id, "frames": rows}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DetectionSidecar":
        frames = {}
        for row in doc["frames"]:
            fi, level = int(row["frame_index"]), int(row["blur_level"])
            if level < 0:
                raise ValueError(f"negative blur_level in sidecar for {doc['video_id']}")
            frames[(fi, level)] = tuple(Detection.from_dict(d) for d in row["detections"])
        return cls(str(doc["video_id"]), frames)


def load_sidecar(path) -> DetectionSidecar:
    with open(path) as fh:
        return DetectionSidecar.from_dict(json.load(fh))


def save_sidecar(sidecar: DetectionSidecar, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(sidecar.to_dict(), fh)
    os.replace(tmp, path)


@dataclass
class DetectorHandle:
    """Answers ``detect`` queries either from sidecar files or from a script.

    A file-backed handle reads ``<sidecar_dir>/<video_id>.json`` on first use
    and caches it; a scripted handle maps blur level to a fixed detection list
    regardless of video or frame.
    """

    kind: str = "FileBacked"
    confidence_threshold: float = DEFAULT_THRESHOLD
    sidecar_dir: Optional[str] = None
    rule: Optional[Mapping] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0.0 < self.confidence_threshold < 1.0:
            raise ValueError("confidence_threshold must lie in (0, 1)")
        if self.kind not in ("FileBacked", "Scripted"):
            raise ValueError(f"unknown detector kind {self.kind!r}")

    def _raw(self, video_id: str, frame_index: int, blur_level: int):
        if self.kind == "Scripted":
            if blur_level not in self.rule:
                raise MissingSidecarError((video_id, frame_index, blur_level))
            return self.rule[blur_level]
        sidecar = self._cache.get(video_id)
        if sidecar is None:
            path = Path(self.sidecar_dir) / f"{video_id}.json"
            if not path.exists():
                raise MissingSidecarError(f"no detection sidecar for video {video_id!r} ({path})")
            sidecar = self._cache[video_id] = load_sidecar(path)
        try:
            return sidecar.frames[(frame_index, blur_level)]
        except KeyError:
            raise MissingSidecarError((video_id, frame_index, blur_level)) from None

    def detect(self, frame_key) -> list:
        """Detections for ``(video_id, frame_index, blur_level)`` above the threshold."""
        video_id, frame_index, blur_level = frame_key
        return [d for d in self._raw(video_id, frame_index, blur_level)
                if d.confidence > self.confidence_threshold]


def detect(handle: DetectorHandle, frame_key) -> list:
    return handle.detect(frame_key)


def file_detector(sidecar_dir, confidence_threshold: float = DEFAULT_THRESHOLD) -> DetectorHandle:
    return DetectorHandle("FileBacked", confidence_threshold, sidecar_dir=str(sidecar_dir))


def scripted_detector(rule: Mapping, confidence_threshold: float = DEFAULT_THRESHOLD) -> DetectorHandle:
    """Test double whose answer depends only on the blur level."""
    frozen = {int(k): tuple(v) for k, v in rule.items()}
    return DetectorHandle("Scripted", confidence_threshold, rule=frozen)
