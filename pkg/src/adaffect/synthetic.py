"""Synthetic ad corpus with a known answer.

Every video's valence label is planted twice: in the orientation of a
one-cycle background shading (coarse structure that survives heavy blur)
and in the orientation of a fine grating inside a small salient patch that
the simulated viewers look at. Textured rectangles reported as detections
carry no label information. Arousal labels are random.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .detector import Detection, DetectionSidecar, save_sidecar
from .features import FC8_DIM, write_feature_sidecar
from .gaze import GazeTrace, write_gaze_csv
from .gaze import display_rect
from .model import (FRAME_STEP_S, SCREEN, ChannelKind, frame_count, frame_filename, write_image)

PATCH = 16


def _frame(rng, w, h, high, layout, phase, jitter_deg):
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    base = rng.uniform(90, 150)
    # one cycle across the frame; wave vector along x (High) or y (Low), jittered
    theta = np.deg2rad((0.0 if high else 90.0) + rng.normal(0, jitter_deg))
    u = np.cos(theta) * (xx - w / 2) / w + np.sin(theta) * (yy - h / 2) / h
    img = base + 55 * np.cos(2 * np.pi * u + phase)
    img = np.repeat(img[..., None], 3, axis=2) * np.array([1.0, 0.95, 0.9])
    img += rng.normal(0, 2.0, img.shape)
    for (x, y, bw, bh) in layout["objects"]:
        x = int(np.clip(x + rng.integers(-2, 3), 0, w - bw))
        y = int(np.clip(y + rng.integers(-2, 3), 0, h - bh))
        tex = rng.uniform(0, 255, (bh, bw, 1)) * rng.uniform(0.6, 1.0, (1, 1, 3))
        img[y:y + bh, x:x + bw] = tex
    px, py = layout["patch"]
    gy, gx = np.mgrid[0:PATCH, 0:PATCH]
    stripes = np.cos(np.pi * (gx if high else gy) / 2)  # period 4 px
    img[py:py + PATCH, px:px + PATCH] = (128 + 110 * stripes)[..., None]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _layout(rng, w, h, n_objects):
    while True:
        px, py = int(rng.integers(4, w - PATCH - 4)), int(rng.integers(4, h - PATCH - 4))
        objects = []
        for _ in range(n_objects):
            bw, bh = int(rng.integers(w // 6, w // 3)), int(rng.integers(h // 6, h // 3))
            objects.append((int(rng.integers(0, w - bw)), int(rng.integers(0, h - bh)), bw, bh))
        clear = all(x + bw + 3 < px or px + PATCH + 3 < x or y + bh + 3 < py or py + PATCH + 3 < y
                    for x, y, bw, bh in objects)
        if clear:
            return {"patch": (px, py), "objects": objects}


def _gaze(rng, duration_s, targets, weights, screen=SCREEN):
    """60 Hz trace alternating 200-400 ms fixations on ``targets`` (screen px)."""
    dt = 1000.0 / 60
    t, rows = 0.0, []
    end = duration_s * 1000.0
    prev = None
    while t < end:
        k = rng.choice(len(targets), p=weights)
        cx, cy = targets[k] + rng.normal(0, 12, 2)
        if prev is not None:
            for f in (1 / 3, 2 / 3):  # transit samples
                rows.append((t, *(prev + f * (np.array([cx, cy]) - prev))))
                t += dt
        for _ in range(int(rng.integers(12, 25))):
            if t >= end:
                break
            rows.append((t, cx + rng.normal(0, 3), cy + rng.normal(0, 3)))
            t += dt
        prev = np.array([cx, cy])
    s = np.array(rows)
    s[:, 1] = np.clip(s[:, 1], 0, screen[0] - 1)
    s[:, 2] = np.clip(s[:, 2], 0, screen[1] - 1)
    s[:, 0] = np.round(s[:, 0], 3)
    return s


def make_corpus(root, n_videos: int = 30, size=(96, 64), durations=(12.0, 18.0), n_raters: int = 3,
                n_objects: int = 3, seed: int = 0, fc8: bool = False,
                jitter_deg: float = 30.0) -> Path:
    """Write frames, detection sidecars, gaze CSVs, ratings and ``manifest.json``.

    ``jitter_deg`` is the per-frame spread of the background orientation, so
    the coarse cue alone is imperfect. Labels alternate so both classes are
    equally represented. Returns the manifest path.
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    w, h = size
    raters = [f"r{i}" for i in range(n_raters)]
    videos, gaze_refs = [], []
    val = np.full((n_raters, n_videos), np.nan)
    aro = np.full((n_raters, n_videos), np.nan)
    x0, y0, scale = display_rect(SCREEN, size)
    arousal_labels = rng.permutation([i % 2 == 0 for i in range(n_videos)])
    for v in range(n_videos):
        vid = f"v{v:03d}"
        high = v % 2 == 0
        duration = float(np.round(rng.uniform(*durations), 2))
        layout = _layout(rng, w, h, n_objects)
        sidecar = {}
        for i in range(frame_count(duration)):
            img = _frame(rng, w, h, high, layout, rng.uniform(-0.4, 0.4), jitter_deg)
            write_image(root / "frames" / vid / frame_filename(i * FRAME_STEP_S * 1000), img)
            dets = [Detection(int(rng.integers(0, 80)), (float(x), float(y), float(bw), float(bh)),
                              float(rng.uniform(0.5, 0.95))) for x, y, bw, bh in layout["objects"]]
            dets.append(Detection(0, (0.0, 0.0, 8.0, 8.0), 0.1))  # below threshold
            sidecar[(i, 0)] = tuple(dets)
            persist = int(rng.choice([0, 1, 2], p=[0.5, 0.35, 0.15]))
            for level in range(1, 4):
                sidecar[(i, level)] = (Detection(dets[0].class_id, dets[0].bbox, 0.4),) if level <= persist else ()
        save_sidecar(DetectionSidecar(vid, sidecar), root / "detections" / f"{vid}.json")
        if fc8:
            n = frame_count(duration)
            logits = rng.normal(0, 1, (n, FC8_DIM))
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            write_feature_sidecar(root / "features", ChannelKind.FC8, vid, range(n), p / p.sum(1, keepdims=True))

        px, py = layout["patch"]
        patch_screen = np.array([x0 + (px + PATCH / 2) * scale, y0 + (py + PATCH / 2) * scale])
        objs = [np.array([x0 + (x + bw / 2) * scale, y0 + (y + bh / 2) * scale])
                for x, y, bw, bh in layout["objects"]]
        targets = [patch_screen] + objs
        weights = np.array([0.8] + [0.2 / len(objs)] * len(objs))
        for r, rater in enumerate(raters):
            trace = GazeTrace(rater, vid, _gaze(rng, duration, targets, weights))
            path = Path("gaze") / f"{rater}_{vid}.csv"
            (root / "gaze").mkdir(parents=True, exist_ok=True)
            write_gaze_csv(root / path, trace)
            gaze_refs.append({"rater_id": rater, "video_id": vid, "path": str(path)})
            val[r, v] = np.clip(np.rint((1.0 if high else -1.0) + rng.normal(0, 0.7)), -2, 2)
            aro[r, v] = np.clip(np.rint((3.0 if arousal_labels[v] else 1.0) + rng.normal(0, 0.9)), 0, 4)
        videos.append({"id": vid, "duration_s": duration, "frame_width": w, "frame_height": h,
                       "frame_dir": f"frames/{vid}", "expert_valence": "High" if high else "Low",
                       "expert_arousal": "High" if arousal_labels[v] else "Low"})
    doc = {
        "videos": videos,
        "ratings": {"raters": raters, "items": [v["id"] for v in videos],
                    "valence": [[int(x) for x in row] for row in val],
                    "arousal": [[int(x) for x in row] for row in aro]},
        "gaze": gaze_refs,
        "sidecars": {"detections": "detections", "features": "features"},
    }
    path = root / "manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
    return path
