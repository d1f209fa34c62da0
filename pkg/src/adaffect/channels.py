"""Pixel operators that turn a raw frame into each content-driven channel.

All operators are pure: they never modify their inputs and return new
``uint8`` images.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .detector import DetectorHandle
from .model import ChannelKind, FrameSample, write_image

log = logging.getLogger(__name__)

BLUR_WIDTH_FRACTION = 0.2
WARM_THRESHOLD = 170
MAX_BLUR_ITERATIONS = 10
FAST_BLUR_FACTOR = 8
FAST_BLUR_MIN_SIGMA = 32.0


class BlurNonConvergenceError(RuntimeError):
    """Objects were still detected after the maximum number of blurs.

    ``image`` holds the frame blurred ``iterations`` times so callers can
    fall back to it.
    """

    def __init__(self, message, image=None, iterations=0):
        super().__init__(message)
        self.image = image
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class ChannelImage:
    source: tuple  # (video_id, frame_index)
    channel: ChannelKind
    pixels: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BlurKernel:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def radius(self) -> int:
        return int(math.ceil(3 * self.sigma))

    @property
    def weights(self) -> np.ndarray:
        x = np.arange(-self.radius, self.radius + 1, dtype=float)
        k = np.exp(-0.5 * (x / self.sigma) ** 2)
        return k / k.sum()


def blur_sigma(frame_width: int) -> float:
    return BLUR_WIDTH_FRACTION * frame_width


def _separable(img: np.ndarray, sigma: float) -> np.ndarray:
    k = BlurKernel(sigma).weights
    out = ndimage.correlate1d(img, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def _downsampled(img: np.ndarray, sigma: float, factor: int) -> np.ndarray:
    h, w = img.shape[:2]
    # replicate the border at full resolution first so the block grid never sees it
    r = int(math.ceil(3 * sigma / factor)) * factor
    ph, pw = r + (-(h + 2 * r) % factor), r + (-(w + 2 * r) % factor)
    pad = [(r, ph), (r, pw)] + [(0, 0)] * (img.ndim - 2)
    padded = np.pad(img, pad, mode="edge")
    hs, ws = padded.shape[0] // factor, padded.shape[1] // factor
    small = padded.reshape(hs, factor, ws, factor, *img.shape[2:]).mean(axis=(1, 3))
    small = _separable(small, sigma / factor)
    # pixel-centre registration between the two grids
    rows = (np.arange(h) + r + 0.5) / factor - 0.5
    cols = (np.arange(w) + r + 0.5) / factor - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    if img.ndim == 2:
        return ndimage.map_coordinates(small, [rr, cc], order=1, mode="nearest")
    return np.stack([ndimage.map_coordinates(small[..., c], [rr, cc], order=1, mode="nearest")
                     for c in range(img.shape[2])], axis=-1)


def gaussian_blur(pixels: np.ndarray, sigma: float, mode: str = "auto") -> np.ndarray:
    """Replicate-border Gaussian blur of an 8-bit image, truncated at 3 sigma.

    ``mode="exact"`` runs the separable convolution at full resolution;
    ``"fast"`` blurs a 1/8 block-averaged copy and bilinearly upsamples;
    ``"auto"`` uses the fast path once sigma reaches 32 px.
    """
    img = pixels.astype(np.float64)
    if mode == "auto":
        mode = "fast" if sigma >= FAST_BLUR_MIN_SIGMA else "exact"
    if mode == "exact":
        out = _separable(img, sigma)
    elif mode == "fast":
        out = _downsampled(img, sigma, FAST_BLUR_FACTOR)
    else:
        raise ValueError(f"unknown blur mode {mode!r}")
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def constant_blur(frame: FrameSample, mode: str = "auto") -> ChannelImage:
    sigma = blur_sigma(frame.width)
    return ChannelImage((frame.video_id, frame.index), ChannelKind.CONSTANT_BLUR,
                        gaussian_blur(frame.pixels, sigma, mode), {"sigma": sigma})


def adaptive_blur(frame: FrameSample, detector: DetectorHandle,
                  max_iter: int = MAX_BLUR_ITERATIONS, mode: str = "auto") -> ChannelImage:
    """Blur repeatedly until the detector reports nothing.

    The detector is first consulted after one blur, so at least one blur is
    always applied. Raises :class:`BlurNonConvergenceError` if level
    ``max_iter`` still has detections.
    """
    sigma = blur_sigma(frame.width)
    img = frame.pixels
    for k in range(1, max_iter + 1):
        img = gaussian_blur(img, sigma, mode)
        if not detector.detect((frame.video_id, frame.index, k)):
            return ChannelImage((frame.video_id, frame.index), ChannelKind.ADAPTIVE_BLUR, img,
                                {"sigma": sigma, "iterations": k})
    raise BlurNonConvergenceError(
        f"objects still detected after {max_iter} blurs ({frame.video_id}, frame {frame.index})",
        image=img, iterations=max_iter)


def object_crops(frame: FrameSample, dets) -> list:
    h, w = frame.pixels.shape[:2]
    crops = []
    for n, det in enumerate(dets):
        x0, y0, x1, y1 = det.clamped(w, h)
        if x1 <= x0 or y1 <= y0:
            log.warning("skipping degenerate crop %d of %s frame %d: bbox %s",
                        n, frame.video_id, frame.index, det.bbox)
            continue
        crops.append(ChannelImage((frame.video_id, frame.index), ChannelKind.OBJECT_CROPS,
                                  frame.pixels[y0:y1, x0:x1].copy(),
                                  {"crop": n, "detection": det.to_dict(), "box": [x0, y0, x1, y1]}))
    return crops


def detection_mask(shape, dets) -> np.ndarray:
    h, w = shape[:2]
    mask = np.zeros((h, w), dtype=bool)
    for det in dets:
        x0, y0, x1, y1 = det.clamped(w, h)
        mask[y0:y1, x0:x1] = True
    return mask


def object_retained(frame: FrameSample, dets) -> ChannelImage:
    mask = detection_mask(frame.pixels.shape, dets)
    out = np.where(mask[..., None], frame.pixels, 0).astype(np.uint8)
    return ChannelImage((frame.video_id, frame.index), ChannelKind.OBJECT_RETAINED, out,
                        {"n_detections": len(dets)})


def roi_mask(heat, shape, warm_threshold: float = WARM_THRESHOLD) -> np.ndarray:
    grid = heat.grid if hasattr(heat, "grid") else np.asarray(heat)
    if grid.shape != tuple(shape[:2]):
        raise ValueError(f"heatmap shape {grid.shape} is not registered to frame {shape[:2]}")
    return grid >= warm_threshold


def eye_roi(frame: FrameSample, heat, warm_threshold: float = WARM_THRESHOLD) -> ChannelImage:
    mask = roi_mask(heat, frame.pixels.shape, warm_threshold)
    out = np.where(mask[..., None], frame.pixels, 0).astype(np.uint8)
    return ChannelImage((frame.video_id, frame.index), ChannelKind.EYE_ROI, out,
                        {"roi_pixels": int(mask.sum()), "warm_threshold": warm_threshold})


def eye_roi_context_blur(frame: FrameSample, heat, warm_threshold: float = WARM_THRESHOLD,
                         mode: str = "auto", blurred: Optional[ChannelImage] = None) -> ChannelImage:
    """Constant-blur context with the gazed region pasted back at full resolution.

    The paste is driven by the threshold mask, not by non-zero ROI pixels, so
    genuinely black pixels inside the region survive.
    """
    mask = roi_mask(heat, frame.pixels.shape, warm_threshold)
    context = blurred if blurred is not None else constant_blur(frame, mode)
    roi = eye_roi(frame, heat, warm_threshold)
    out = np.where(mask[..., None], roi.pixels, context.pixels).astype(np.uint8)
    return ChannelImage((frame.video_id, frame.index), ChannelKind.EYE_ROI_CONTEXT_BLUR, out,
                        {"roi_pixels": int(mask.sum()), "sigma": context.meta.get("sigma")})


def channel_path(out_dir, image: ChannelImage) -> Path:
    video_id, frame_index = image.source
    name = str(frame_index)
    if image.channel is ChannelKind.OBJECT_CROPS:
        name += f"_crop{image.meta['crop']}"
    return Path(out_dir) / image.channel.value / video_id / f"{name}.png"


def write_channel_image(out_dir, image: ChannelImage) -> Path:
    path = channel_path(out_dir, image)
    write_image(path, image.pixels)
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump({"video_id": image.source[0], "frame_index": image.source[1],
                   "channel": image.channel.value, **image.meta}, fh, sort_keys=True)
    return path
