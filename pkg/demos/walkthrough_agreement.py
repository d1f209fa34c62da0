"""Rater agreement and FDR control on a toy rating grid.

    python demos/walkthrough_agreement.py
"""
import numpy as np

from adaffect.stats import benjamini_hochberg, fleiss_kappa, krippendorff_alpha, threshold_labels

rng = np.random.default_rng(1)
truth = rng.integers(1, 6, 20)  # 20 items on a 1..5 scale
grid = np.clip(truth + rng.integers(-1, 2, (5, 20)), 1, 5).astype(float)  # 5 raters, mild noise
grid[0, 3] = np.nan  # one missing rating is fine for alpha

print(f"ordinal alpha: {krippendorff_alpha(grid):.3f}")
print(f"interval alpha: {krippendorff_alpha(grid, 'interval'):.3f}")
full = np.nan_to_num(grid, nan=3.0)
print(f"Fleiss kappa on High/Low split: {fleiss_kappa(threshold_labels(full)):.3f}")

p = np.array([0.001, 0.008, 0.039, 0.041, 0.27, 0.6])
print("BH rejections at q=0.05:", benjamini_hochberg(p, 0.05).tolist())
