"""From raw gaze samples to fixations, saccades, a heatmap and EyeHist.

    python demos/walkthrough_gaze.py
"""
import numpy as np

from adaffect.gaze import (GazeTrace, derive_saccades, detect_fixations, rater_feature_dim,
                           rater_histograms)

rng = np.random.default_rng(0)
# three dwell points, 60 Hz, 1 px jitter; columns are t_ms, x, y
rows, t = [], 0.0
for cx, cy, dur in [(300, 200, 400), (700, 350, 250), (420, 500, 600)]:
    for _ in range(int(dur / 1000 * 60)):
        rows.append((t, cx + rng.normal(), cy + rng.normal()))
        t += 1000 / 60
    t += 80  # saccade gap
samples = np.array(rows)

fix = detect_fixations(GazeTrace("r0", "demo", samples))
for f in fix:
    print(f"fixation at ({f.center[0]:.1f}, {f.center[1]:.1f}) for {f.duration_ms:.0f} ms")
sac = derive_saccades(fix)
print(f"{len(sac)} saccades derived")
hist = rater_histograms(fix, sac)
for name, h in hist.items():
    print(f"{name:>22}: {h.size:4d} bins, mass {h.sum():.0f}")
print(f"EyeHist length per rater: {rater_feature_dim()}")
