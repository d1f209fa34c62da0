"""Per-frame descriptors: the Gist descriptor, ingestion of precomputed deep
features, and assembly of classifier design matrices."""

from __future__ import annotations

import csv
import enum
import functools
import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Optional

import numpy as np
import scipy.fft
from PIL import Image

from .model import Affect, AffectTask, ChannelKind, DatasetManifest, FRAME_STEP_S, Level

log = logging.getLogger(__name__)

GIST_SIZE = 256
GIST_SCALES = 4
GIST_ORIENTATIONS = 8
GIST_BLOCKS = 4
GIST_PAD = 32
GIST_PREFILTER_FC = 4.0
GIST_DIM = GIST_BLOCKS * GIST_BLOCKS * GIST_SCALES * GIST_ORIENTATIONS

FC7_DIM = 4096
FC8_DIM = 1000


class FeatureFormatError(ValueError):
    pass


class EmptyDesignError(ValueError):
    pass


class Window(str, enum.Enum):
    ALL = "All"
    L30 = "L30"
    L10 = "L10"

    @property
    def seconds(self) -> Optional[float]:
        return {"All": None, "L30": 30.0, "L10": 10.0}[self.value]


class FrameKey(NamedTuple):
    video_id: str
    frame_index: int  # -1 for video-level rows
    sub: int = 0  # crop number for ObjectCrops


@dataclass(frozen=True, eq=False)
class FeatureVector:
    channel: ChannelKind
    values: np.ndarray
    scope: str = "frame"

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


# -- Gist -------------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def gabor_bank(size: int = GIST_SIZE + 2 * GIST_PAD, scales: int = GIST_SCALES,
               orientations: int = GIST_ORIENTATIONS) -> np.ndarray:
    """Frequency-domain Gabor-like transfer functions, shape (S*O, size, size).

    Filter ``s*O + o`` peaks at radial frequency ``0.3 / 1.85**s``
    cycles/pixel along direction ``o * 180/O`` degrees (0 = intensity varying
    along x). Each filter covers one half-plane and is zero at DC.
    """
    f = np.fft.fftfreq(size)
    fx, fy = np.meshgrid(f, f)
    fr = np.hypot(fx, fy)
    theta = np.arctan2(fy, fx)
    bank = np.empty((scales * orientations, size, size))
    for s in range(scales):
        f0 = 0.3 / 1.85 ** s
        for o in range(orientations):
            dt = np.angle(np.exp(1j * (theta - np.pi * o / orientations)))
            bank[s * orientations + o] = np.exp(-3.5 * (fr / f0 - 1) ** 2
                                                - 2 * np.pi * (orientations / 8) ** 2 * dt ** 2)
    bank[:, fr == 0] = 0.0
    bank = bank.astype(np.float32)
    bank.setflags(write=False)
    return bank


def _gray(img) -> np.ndarray:
    a = np.asarray(img.pixels if hasattr(img, "pixels") else img, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., :3] @ np.array([0.299, 0.587, 0.114])
    return a


def _resize(gray: np.ndarray, size: int) -> np.ndarray:
    if gray.shape == (size, size):
        return gray.copy()
    im = Image.fromarray(gray.astype(np.float32), mode="F")
    return np.asarray(im.resize((size, size), Image.BILINEAR), dtype=np.float64)


def _prefilter(img: np.ndarray, fc: float = GIST_PREFILTER_FC) -> np.ndarray:
    """Whitening plus local contrast normalisation."""
    w = 5
    img = np.log1p(np.maximum(img, 0))
    padded = np.pad(img, w, mode="symmetric")
    n = padded.shape[0]
    f = np.fft.fftfreq(n) * n
    fx, fy = np.meshgrid(f, f)
    s1 = fc / np.sqrt(np.log(2))
    gf = np.exp(-(fx ** 2 + fy ** 2) / s1 ** 2)
    hp = padded - np.real(np.fft.ifft2(np.fft.fft2(padded) * gf))
    local = np.sqrt(np.abs(np.real(np.fft.ifft2(np.fft.fft2(hp ** 2) * gf))))
    return (hp / (0.2 + local))[w:-w, w:-w]


def gist(image, normalize: bool = True) -> np.ndarray:
    """512-d Gist descriptor of an image (ndarray or anything with ``.pixels``).

    The image is converted to gray, resized to 256x256, optionally whitened
    and contrast-normalised, filtered by a 4-scale x 8-orientation bank and
    the response magnitude averaged over a 4x4 grid of blocks. Layout is
    scale-major, orientation-minor, block-last (blocks row-major).
    """
    g = _resize(_gray(image), GIST_SIZE)
    if normalize:
        g = _prefilter(g)
    padded = np.pad(g, GIST_PAD, mode="symmetric")
    bank = gabor_bank(padded.shape[0])
    spectrum = scipy.fft.fft2(padded.astype(np.float32))
    resp = np.abs(scipy.fft.ifft2(spectrum[None] * bank, axes=(-2, -1)))
    resp = resp[:, GIST_PAD:-GIST_PAD, GIST_PAD:-GIST_PAD].astype(np.float64)
    b = GIST_SIZE // GIST_BLOCKS
    blocks = resp.reshape(len(bank), GIST_BLOCKS, b, GIST_BLOCKS, b).mean(axis=(2, 4))
    return blocks.reshape(-1)


# -- feature sidecars -------------------------------------------------------

def expected_dim(channel: ChannelKind, descriptor: Optional[str] = None) -> Optional[int]:
    if (descriptor or "").startswith("gist") or channel is ChannelKind.GIST:
        return GIST_DIM
    if channel is ChannelKind.FC8:
        return FC8_DIM
    if channel is ChannelKind.EYE_HIST:
        return None
    return FC7_DIM


def write_feature_sidecar(directory, channel: ChannelKind, video_id: str, frame_index,
                          rows: np.ndarray, descriptor: Optional[str] = None) -> Path:
    """Binary sidecar: one JSON header line, then row-major little-endian float32.

    The frame index of each row goes to a companion ``.idx`` text file.
    """
    rows = np.asarray(rows, dtype="<f4")
    rows = rows.reshape(len(rows), -1) if rows.size else rows.reshape(0, 0)
    d = Path(directory) / channel.value
    d.mkdir(parents=True, exist_ok=True)
    header = {"channel": channel.value, "video_id": video_id, "dim": int(rows.shape[1]) if rows.size else 0,
              "n_rows": int(rows.shape[0])}
    if descriptor:
        header["descriptor"] = descriptor
    path = d / f"{video_id}.bin"
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(rows.tobytes())
    os.replace(tmp, path)
    with open(d / f"{video_id}.idx", "w") as fh:
        fh.write("".join(f"{int(i)}\n" for i in frame_index))
    return path


def _read_bin(path: Path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f4")
    dim, n = int(header["dim"]), int(header["n_rows"])
    if data.size != dim * n:
        raise FeatureFormatError(f"{path}: header declares {n}x{dim} values, file holds {data.size}")
    idx_path = path.with_suffix(".idx")
    with open(idx_path) as fh:
        index = [int(line) for line in fh if line.strip()]
    if len(index) != n:
        raise FeatureFormatError(f"{idx_path}: {len(index)} frame indices for {n} rows")
    return header, index, data.reshape(n, dim).astype(np.float64)


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader)
        if head[0] != "frame_index":
            raise FeatureFormatError(f"{path}: first column must be frame_index")
        index, rows = [], []
        for row in reader:
            if len(row) != len(head):
                raise FeatureFormatError(f"{path}: row of length {len(row)}, header has {len(head)}")
            index.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(head) - 1)
    return {"dim": len(head) - 1}, index, data


@dataclass
class DeepFeatures:
    channel: ChannelKind
    vectors: dict  # FrameKey -> FeatureVector
    missing: list = field(default_factory=list)

    @property
    def dim(self) -> Optional[int]:
        for v in self.vectors.values():
            return v.dim
        return None


def load_deep_features(sidecar_dir, channel: ChannelKind, manifest: Optional[DatasetManifest] = None,
                       dim: Optional[int] = None) -> DeepFeatures:
    """Read every ``<sidecar_dir>/<channel>/<video>.{bin,csv}`` file.

    ``dim`` overrides the expected dimensionality (default: header
    descriptor, else 4096 for FC7 channels and 1000 for FC8). FC8 rows must
    be probability vectors. With a manifest, frames (or videos, for
    ObjectCrops and video-level channels) lacking rows are listed in
    ``missing`` instead of raising.
    """
    base = Path(sidecar_dir) / channel.value
    vectors = {}
    scope = "video" if channel.video_level else "frame"
    files = sorted(base.glob("*.bin")) + sorted(base.glob("*.csv")) if base.is_dir() else []
    seen_videos = set()
    for path in files:
        if path.suffix == ".bin":
            header, index, data = _read_bin(path)
            video_id = header.get("video_id", path.stem)
        else:
            header, index, data = _read_csv(path)
            video_id = path.stem
        want = dim if dim is not None else expected_dim(channel, header.get("descriptor"))
        if want is not None and data.shape[0] and data.shape[1] != want:
            raise FeatureFormatError(f"{path}: rows have dim {data.shape[1]}, expected {want}")
        if not np.all(np.isfinite(data)):
            raise FeatureFormatError(f"{path}: non-finite feature values")
        if channel is ChannelKind.FC8:
            bad = (data < 0).any(axis=1) | (data > 1).any(axis=1) | (np.abs(data.sum(axis=1) - 1) > 1e-3)
            if bad.any():
                r = int(np.flatnonzero(bad)[0])
                raise FeatureFormatError(
                    f"{path}: row {r} is not a softmax posterior (sum {data[r].sum():.4f})")
        seen_videos.add(video_id)
        counts = {}
        for fi, row in zip(index, data):
            sub = counts.get(fi, 0)
            counts[fi] = sub + 1
            vectors[FrameKey(video_id, int(fi), sub)] = FeatureVector(channel, row, scope)
    dims = {v.dim for v in vectors.values()}
    if len(dims) > 1:
        raise FeatureFormatError(f"{channel.value}: inconsistent dims across files {sorted(dims)}")

    missing = []
    if manifest is not None:
        for v in manifest.videos:
            if channel.video_level or channel is ChannelKind.OBJECT_CROPS:
                if v.id not in seen_videos:
                    missing.append(FrameKey(v.id, -1))
                continue
            for i in range(v.n_frames):
                if FrameKey(v.id, i) not in vectors:
                    missing.append(FrameKey(v.id, i))
    return DeepFeatures(channel, vectors, missing)


# -- design matrices ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray  # 1 = High
    groups: np.ndarray
    keys: tuple
    channel: ChannelKind = ChannelKind.VIDEO
    window: Window = Window.ALL

    def __len__(self):
        return len(self.y)


def in_window(timestamp_s: float, duration_s: float, window: Window) -> bool:
    span = Window(window).seconds
    return span is None or timestamp_s >= duration_s - span


def assemble_design_matrix(manifest: DatasetManifest, channel: ChannelKind, window: Window,
                           task: AffectTask, features) -> DesignMatrix:
    """Stack the channel's feature rows that fall in the temporal window.

    ``features`` is a :class:`DeepFeatures` or a mapping FrameKey ->
    FeatureVector/array. Rows are ordered by manifest video order, then
    frame index, then crop number; each is labelled with its video's expert
    label (1 = High).
    """
    window = Window(window)
    vectors = features.vectors if isinstance(features, DeepFeatures) else features
    if channel.video_level and window is not Window.ALL:
        warnings.warn(f"{channel.value} is video-level; window {window.value} ignored", stacklevel=2)
    by_video = {}
    for key in vectors:
        by_video.setdefault(key[0], []).append(key)
    rows, labels, groups, keys = [], [], [], []
    for v in manifest.videos:
        label = 1 if v.label(task.dimension) is task.positive_class else 0
        for key in sorted(by_video.get(v.id, []), key=lambda k: (k[1], k[2])):
            if not channel.video_level and not in_window(key[1] * FRAME_STEP_S, v.duration_s, window):
                continue
            vec = vectors[key]
            rows.append(np.asarray(getattr(vec, "values", vec), dtype=np.float64))
            labels.append(label)
            groups.append(v.id)
            keys.append(FrameKey(*key))
    if not rows:
        raise EmptyDesignError(f"no rows for channel {channel.value} under window {window.value}")
    return DesignMatrix(np.vstack(rows), np.array(labels, dtype=int), np.array(groups),
                        tuple(keys), channel, window)
