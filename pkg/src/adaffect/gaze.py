"""Gaze traces: fixation/saccade segmentation, per-frame heatmaps and the
eye-movement histogram feature."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from .model import SCREEN

FIXATION_MIN_MS = 100.0
DISPERSION_PX = 50.0
MAX_GAP_MS = 100.0
HEAT_CELL_PX = 40
HEAT_KERNEL_SIZE = 5
HEAT_KERNEL_SIGMA = 3.0
HEAT_HALF_WINDOW_S = 1.0
SLOPE_CLAMP = 10.0
ZERO_DURATION_EPS_MS = 1.0
MALFORMED_LIMIT = 0.10

# (name, bins) for the min-max binned histograms, in feature order
HIST_BINS = (("saccade_length", 50), ("saccade_slope", 30), ("saccade_duration", 60),
             ("saccade_velocity", 50), ("saccade_orientation", 36), ("fixation_duration", 60))
SPATIAL_PATCH = (20, 40)  # width, height in screen pixels


class GazeFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GazeTrace:
    rater_id: str
    video_id: str
    samples: np.ndarray  # (n, 3): t_ms, x_px, y_px
    screen: tuple = SCREEN

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "samples", s)
        if len(s) > 1 and np.any(np.diff(s[:, 0]) <= 0):
            raise ValueError(f"gaze timestamps must be strictly increasing ({self.rater_id}/{self.video_id})")

    @property
    def t(self):
        return self.samples[:, 0]

    def valid(self) -> "GazeTrace":
        """Samples with finite coordinates inside the screen."""
        s = self.samples
        w, h = self.screen
        ok = (np.isfinite(s).all(axis=1) & (s[:, 1] >= 0) & (s[:, 1] < w)
              & (s[:, 2] >= 0) & (s[:, 2] < h))
        return GazeTrace(self.rater_id, self.video_id, s[ok], self.screen)


@dataclass(frozen=True)
class Fixation:
    start_ms: float
    end_ms: float
    center: tuple
    n_samples: int = 0

    @property
    def duration_ms(self) -> float:
        return self.end_ms - self.start_ms


@dataclass(frozen=True)
class Saccade:
    start: tuple
    end: tuple
    length: float
    duration_ms: float
    velocity: float
    slope: float
    orientation: float


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Gaze density normalised to [0, 255] on a pixel grid.

    ``points`` keeps the contributing gaze coordinates so the map can be
    re-registered to another coordinate frame without smearing mass across
    the crop boundary.
    """

    grid: np.ndarray
    window: tuple
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    cell_px: float = HEAT_CELL_PX
    kernel_size: int = HEAT_KERNEL_SIZE
    kernel_sigma: float = HEAT_KERNEL_SIGMA

    @property
    def empty(self) -> bool:
        return len(self.points) == 0


def read_gaze_csv(path, rater_id: str = "", video_id: str = "", screen=SCREEN):
    """Parse a ``t_ms,x_px,y_px`` file.

    Returns ``(trace, n_malformed)``. Malformed rows (wrong arity,
    non-numeric, non-increasing time) are skipped; more than 10% malformed
    rejects the file.
    """
    rows, bad, total = [], 0, 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t_ms", "x_px", "y_px"]:
            raise GazeFileError(f"{path}: expected header t_ms,x_px,y_px, got {header}")
        last_t = -math.inf
        for row in reader:
            if not row:
                continue
            total += 1
            try:
                t, x, y = (float(v) for v in row)
            except ValueError:
                bad += 1
                continue
            if not math.isfinite(t) or t <= last_t:
                bad += 1
                continue
            rows.append((t, x, y))
            last_t = t
    if total and bad / total > MALFORMED_LIMIT:
        raise GazeFileError(f"{path}: {bad}/{total} malformed rows exceeds {MALFORMED_LIMIT:.0%}")
    return GazeTrace(rater_id, video_id, np.array(rows).reshape(-1, 3), screen), bad


def write_gaze_csv(path, trace: GazeTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ms", "x_px", "y_px"])
        for t, x, y in trace.samples:
            w.writerow([f"{t:.3f}".rstrip("0").rstrip("."), f"{x:.2f}", f"{y:.2f}"])


def detect_fixations(trace: GazeTrace, duration_threshold_ms: float = FIXATION_MIN_MS,
                     dispersion_px: float = DISPERSION_PX, max_gap_ms: float = MAX_GAP_MS) -> list:
    """Greedy left-to-right spatial clustering of gaze samples.

    A sample joins the open cluster when it lies within ``dispersion_px`` of
    the cluster's running centroid and follows the previous sample by at
    most ``max_gap_ms``; otherwise the cluster closes and the sample opens a
    new one. Clusters spanning less than ``duration_threshold_ms`` (first to
    last sample) are dropped.
    """
    s = trace.samples
    if len(s) < 2:
        return []
    fixations = []
    start = 0
    sx, sy = s[0, 1], s[0, 2]
    n = 1

    def close(i0, i1, sx, sy, n):
        t0, t1 = s[i0, 0], s[i1, 0]
        if t1 - t0 >= duration_threshold_ms:
            fixations.append(Fixation(float(t0), float(t1), (sx / n, sy / n), n))

    for i in range(1, len(s)):
        t, x, y = s[i]
        cx, cy = sx / n, sy / n
        if (x - cx) ** 2 + (y - cy) ** 2 <= dispersion_px ** 2 and t - s[i - 1, 0] <= max_gap_ms:
            sx += x
            sy += y
            n += 1
        else:
            close(start, i - 1, sx, sy, n)
            start, sx, sy, n = i, x, y, 1
    close(start, len(s) - 1, sx, sy, n)
    return fixations


def derive_saccades(fixations: Sequence[Fixation]) -> list:
    """One saccade between each consecutive pair of fixations.

    Orientation is ``atan2(dy, dx)`` in screen coordinates (y down) mapped
    to [0, 360). Vertical saccades get slope ``+-inf`` (``0`` if there is no
    displacement at all).
    """
    out = []
    for a, b in zip(fixations, fixations[1:]):
        dx = b.center[0] - a.center[0]
        dy = b.center[1] - a.center[1]
        length = math.hypot(dx, dy)
        duration = b.start_ms - a.end_ms
        velocity = length / (duration if duration > 0 else ZERO_DURATION_EPS_MS)
        if dx != 0:
            slope = dy / dx
        else:
            slope = math.copysign(math.inf, dy) if dy != 0 else 0.0
        orientation = math.degrees(math.atan2(dy, dx)) % 360.0
        out.append(Saccade(a.center, b.center, length, duration, velocity, slope, orientation))
    return out


# -- heatmaps -------------------------------------------------------------

def _kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def gaze_density(points: np.ndarray, extent: tuple, cell_px: float = HEAT_CELL_PX,
                 kernel_size: int = HEAT_KERNEL_SIZE, kernel_sigma: float = HEAT_KERNEL_SIGMA) -> np.ndarray:
    """Unnormalised smoothed gaze counts on the coarse ``cell_px`` grid."""
    w, h = extent
    ncols, nrows = int(math.ceil(w / cell_px)), int(math.ceil(h / cell_px))
    counts = np.zeros((nrows, ncols))
    if len(points):
        c = np.clip((points[:, 0] // cell_px).astype(int), 0, ncols - 1)
        r = np.clip((points[:, 1] // cell_px).astype(int), 0, nrows - 1)
        np.add.at(counts, (r, c), 1.0)
    return ndimage.convolve(counts, _kernel(kernel_size, kernel_sigma), mode="constant")


def _render(points, extent, cell_px, kernel_size, kernel_sigma) -> np.ndarray:
    w, h = extent
    if len(points) == 0:
        return np.zeros((h, w))
    coarse = gaze_density(points, extent, cell_px, kernel_size, kernel_sigma)
    rows = (np.arange(h) + 0.5) / cell_px - 0.5
    cols = (np.arange(w) + 0.5) / cell_px - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    fine = ndimage.map_coordinates(coarse, [rr, cc], order=1, mode="nearest")
    peak = fine.max()
    return fine * (255.0 / peak) if peak > 0 else fine


def window_points(traces: Sequence[GazeTrace], frame_time_s: float,
                  half_window_s: float = HEAT_HALF_WINDOW_S, source: str = "samples") -> np.ndarray:
    lo, hi = (frame_time_s - half_window_s) * 1000.0, (frame_time_s + half_window_s) * 1000.0
    pts = []
    for tr in traces:
        v = tr.valid()
        if source == "samples":
            s = v.samples
            sel = s[(s[:, 0] >= lo) & (s[:, 0] <= hi)]
            pts.append(sel[:, 1:3])
        elif source == "fixations":
            fx = [f.center for f in detect_fixations(v) if f.end_ms >= lo and f.start_ms <= hi]
            pts.append(np.array(fx).reshape(-1, 2))
        else:
            raise ValueError(f"unknown heatmap source {source!r}")
    return np.concatenate(pts) if pts else np.zeros((0, 2))


def build_heatmap(traces: Sequence[GazeTrace], frame_time_s: float, screen: tuple = SCREEN,
                  cell_px: float = HEAT_CELL_PX, kernel_size: int = HEAT_KERNEL_SIZE,
                  kernel_sigma: float = HEAT_KERNEL_SIGMA, source: str = "samples",
                  half_window_s: float = HEAT_HALF_WINDOW_S) -> Heatmap:
    """Screen-registered heatmap of all raters' gaze within +-1 s of the frame.

    Gaze is counted on a ``cell_px`` grid, smoothed with a
    ``kernel_size`` x ``kernel_size`` Gaussian (sigma in cells), bilinearly
    upsampled to pixels and scaled so the maximum is 255.
    """
    pts = window_points(traces, frame_time_s, half_window_s, source)
    grid = _render(pts, screen, cell_px, kernel_size, kernel_sigma)
    return Heatmap(grid, ((frame_time_s - half_window_s) * 1000.0, (frame_time_s + half_window_s) * 1000.0),
                   pts, cell_px, kernel_size, kernel_sigma)


def display_rect(screen: tuple, frame: tuple) -> tuple:
    """``(x0, y0, scale)`` of a frame shown full-screen with preserved aspect."""
    sw, sh = screen
    fw, fh = frame
    scale = min(sw / fw, sh / fh)
    return (sw - fw * scale) / 2.0, (sh - fh * scale) / 2.0, scale


def map_to_frame(heat: Heatmap, screen: tuple, frame: tuple) -> Heatmap:
    """Re-register a screen heatmap onto frame pixels, dropping letterbox gaze.

    The smoothing cell shrinks with the display scale so the kernel covers
    the same on-screen area.
    """
    x0, y0, scale = display_rect(screen, frame)
    fw, fh = frame
    p = (heat.points - np.array([x0, y0])) / scale
    inside = (p[:, 0] >= 0) & (p[:, 0] < fw) & (p[:, 1] >= 0) & (p[:, 1] < fh)
    p = p[inside]
    cell = heat.cell_px / scale
    grid = _render(p, frame, cell, heat.kernel_size, heat.kernel_sigma)
    return Heatmap(grid, heat.window, p, cell, heat.kernel_size, heat.kernel_sigma)


def heatmap_image(heat: Heatmap) -> np.ndarray:
    return np.clip(np.rint(heat.grid), 0, 255).astype(np.uint8)


# -- histogram features -----------------------------------------------------

def _minmax_hist(values, bins: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return np.zeros(bins)
    lo, hi = v.min(), v.max()
    # float noise on equal values leaves a range too small to split into bins
    if hi - lo <= 1e-9 * max(1.0, abs(lo), abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    return np.histogram(v, bins=bins, range=(lo, hi))[0].astype(float)


def spatial_grid_shape(screen=SCREEN, patch=SPATIAL_PATCH) -> tuple:
    """(rows, cols) of the spatial fixation grid."""
    return int(math.ceil(screen[1] / patch[1])), int(math.ceil(screen[0] / patch[0]))


def rater_feature_dim(screen=SCREEN, patch=SPATIAL_PATCH) -> int:
    r, c = spatial_grid_shape(screen, patch)
    return sum(b for _, b in HIST_BINS) + r * c


def rater_histograms(fixations: Sequence[Fixation], saccades: Sequence[Saccade],
                     screen=SCREEN, patch=SPATIAL_PATCH) -> dict:
    """The seven per-rater histograms for one video, keyed by name."""
    slopes = np.clip([s.slope for s in saccades], -SLOPE_CLAMP, SLOPE_CLAMP)
    hists = {
        "saccade_length": _minmax_hist([s.length for s in saccades], 50),
        "saccade_slope": _minmax_hist(slopes, 30),
        "saccade_duration": _minmax_hist([s.duration_ms for s in saccades], 60),
        "saccade_velocity": _minmax_hist([s.velocity for s in saccades], 50),
        "saccade_orientation": np.histogram([s.orientation for s in saccades], bins=36,
                                            range=(0.0, 360.0))[0].astype(float),
        "fixation_duration": _minmax_hist([f.duration_ms for f in fixations], 60),
    }
    rows, cols = spatial_grid_shape(screen, patch)
    spatial = np.zeros((rows, cols))
    for f in fixations:
        c = min(max(int(f.center[0] // patch[0]), 0), cols - 1)
        r = min(max(int(f.center[1] // patch[1]), 0), rows - 1)
        spatial[r, c] += 1
    hists["spatial"] = spatial.ravel()
    return hists


@dataclass(frozen=True, eq=False)
class GazeHistFeature:
    values: np.ndarray
    roster: tuple
    rater_dim: int


def gaze_histogram_features(per_rater: Mapping, roster: Sequence[str], screen=SCREEN,
                            patch=SPATIAL_PATCH) -> GazeHistFeature:
    """Concatenate each rater's histograms in roster order.

    ``per_rater`` maps rater id to ``(fixations, saccades)``; raters absent
    from it contribute a zero block.
    """
    dim = rater_feature_dim(screen, patch)
    blocks = []
    for rater in roster:
        if rater not in per_rater:
            blocks.append(np.zeros(dim))
            continue
        fix, sac = per_rater[rater]
        h = rater_histograms(fix, sac, screen, patch)
        blocks.append(np.concatenate([h[name] for name, _ in HIST_BINS] + [h["spatial"]]))
    return GazeHistFeature(np.concatenate(blocks) if blocks else np.zeros(0), tuple(roster), dim)


def write_fixations_csv(path, rows) -> None:
    """``rows``: iterable of (rater, video, Fixation)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rater", "video", "start_ms", "end_ms", "x", "y"])
        for rater, video, f in rows:
            w.writerow([rater, video, f"{f.start_ms:.3f}", f"{f.end_ms:.3f}",
                        f"{f.center[0]:.3f}", f"{f.center[1]:.3f}"])


def write_saccades_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rater", "video", "from_x", "from_y", "to_x", "to_y", "length",
                    "duration_ms", "velocity", "slope", "orientation"])
        for rater, video, s in rows:
            w.writerow([rater, video, *(f"{v:.3f}" for v in (*s.start, *s.end)),
                        f"{s.length:.3f}", f"{s.duration_ms:.3f}", f"{s.velocity:.6f}",
                        f"{s.slope:.6f}", f"{s.orientation:.3f}"])
