"""Annotation analysis: agreement coefficients, thresholded labels,
correlation with FDR control and rank-sum tests."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps

EXACT_RANKSUM_MAX_N = 12


class UndefinedAgreementError(ValueError):
    """Expected disagreement is zero, so chance-corrected agreement is undefined."""


class UndefinedCorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class AgreementResult:
    coefficient: str  # "KrippendorffAlpha" | "FleissKappa"
    value: float
    metric: str = "ordinal"
    thresholding: str = "none"


# -- Krippendorff's alpha ------------------------------------------------------

def coincidence_matrix(grid) -> tuple:
    """Values and coincidence matrix of a raters x items grid (nan = missing).

    Items with fewer than two ratings are not pairable and are dropped.
    """
    grid = np.asarray(grid, dtype=float)
    present = grid[~np.isnan(grid)]
    values = np.unique(present)
    index = {v: i for i, v in enumerate(values)}
    o = np.zeros((len(values), len(values)))
    for col in grid.T:
        r = col[~np.isnan(col)]
        m = len(r)
        if m < 2:
            continue
        counts = np.zeros(len(values))
        for v in r:
            counts[index[v]] += 1
        o += (np.outer(counts, counts) - np.diag(counts)) / (m - 1)
    return values, o


def _delta2(values, marginals, metric: str) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if metric == "nominal":
        return (v[:, None] != v[None, :]).astype(float)
    if metric == "interval":
        return (v[:, None] - v[None, :]) ** 2
    if metric == "ordinal":
        cum = np.concatenate([[0.0], np.cumsum(marginals)])
        k = len(v)
        d = np.zeros((k, k))
        for c in range(k):
            for e in range(k):
                lo, hi = min(c, e), max(c, e)
                d[c, e] = (cum[hi + 1] - cum[lo] - (marginals[c] + marginals[e]) / 2) ** 2
        return d
    raise ValueError(f"unknown metric {metric!r}")


def krippendorff_alpha(grid, metric: str = "ordinal") -> float:
    """Krippendorff's alpha for a raters x items grid, missing cells as nan.

    Uses the coincidence-matrix form ``1 - (n-1) sum(o*d) / sum(n_c n_k d)``.
    The ordinal distance between categories c and k is the squared count of
    pairable values lying between them, half-counting the endpoints.
    """
    grid = np.asarray(grid, dtype=float)
    pairable = (~np.isnan(grid)).sum(axis=0) >= 2
    if pairable.sum() < 2:
        raise ValueError("need at least two items with two or more ratings")
    values, o = coincidence_matrix(grid)
    marg = o.sum(axis=1)
    n = marg.sum()
    d = _delta2(values, marg, metric)
    observed = (o * d).sum()
    expected = (np.outer(marg, marg) * d).sum()
    if expected == 0:
        raise UndefinedAgreementError("all pairable ratings are identical")
    return float(1 - (n - 1) * observed / expected)


# -- Fleiss' kappa ---------------------------------------------------------------

def fleiss_kappa(grid) -> float:
    """Fleiss' kappa for a complete raters x items grid of category labels."""
    grid = np.asarray(grid, dtype=float)
    if np.isnan(grid).any():
        raise ValueError("Fleiss kappa needs a complete grid (missing ratings present)")
    m, n_items = grid.shape
    if m < 2 or n_items < 2:
        raise ValueError("need at least two raters and two items")
    cats = np.unique(grid)
    counts = np.stack([(grid == c).sum(axis=0) for c in cats], axis=1)  # items x categories
    p_item = ((counts ** 2).sum(axis=1) - m) / (m * (m - 1))
    p_bar = p_item.mean()
    p_cat = counts.sum(axis=0) / (n_items * m)
    p_e = (p_cat ** 2).sum()
    if np.isclose(p_e, 1.0):
        raise UndefinedAgreementError("every rating falls in one category")
    return float((p_bar - p_e) / (1 - p_e))


def threshold_labels(grid, scheme: str = "per-rater-mean") -> np.ndarray:
    """Binarise ratings: 1 (High) iff strictly above the threshold.

    ``per-rater-mean`` thresholds each rater (row) at their own mean and
    requires a complete grid; ``grand-mean`` uses the mean of all present
    ratings. Missing cells stay nan.
    """
    grid = np.asarray(grid, dtype=float)
    if scheme == "per-rater-mean":
        if np.isnan(grid).any():
            raise ValueError("per-rater-mean thresholding needs complete ratings")
        thr = grid.mean(axis=1, keepdims=True)
    elif scheme == "grand-mean":
        thr = np.nanmean(grid)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    out = (grid > thr).astype(float)
    out[np.isnan(grid)] = np.nan
    return out


# -- correlation and multiple testing ------------------------------------------

def benjamini_hochberg(pvalues, q: float = 0.05) -> np.ndarray:
    """Step-up rejection flags: reject the k smallest p-values, k the largest
    rank with ``p_(k) <= k q / m``."""
    p = np.asarray(pvalues, dtype=float)
    m = len(p)
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(p, kind="stable")
    passed = p[order] <= q * np.arange(1, m + 1) / m
    k = int(np.flatnonzero(passed).max()) + 1 if passed.any() else 0
    flags = np.zeros(m, dtype=bool)
    flags[order[:k]] = True
    return flags


def pearson(x, y) -> tuple:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or len(x) < 3:
        raise ValueError("need two equal-length samples of size >= 3")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = (dx * dx).sum(), (dy * dy).sum()
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("zero variance")
    r = float(np.clip((dx * dy).sum() / math.sqrt(sxx * syy), -1.0, 1.0))
    n = len(x)
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1 - r * r))
    return r, float(2 * sps.t.sf(abs(t), n - 2))


def pearson_fdr(x, y, others: Sequence = (), q: float = 0.05) -> tuple:
    """Pearson r and two-sided p, with BH decisions over ``[this test] + others``.

    ``others`` is a list of ``(r, p)`` pairs from the rest of the test family.
    """
    r, p = pearson(x, y)
    flags = benjamini_hochberg([p] + [op for _, op in others], q)
    return r, p, flags


# -- Wilcoxon rank sum -----------------------------------------------------------

def wilcoxon_ranksum(a, b, exact=None) -> tuple:
    """Mann-Whitney U of ``a`` against ``b`` and its two-sided p-value.

    Ties get midranks. Exact enumeration of all rank assignments is used
    when ``len(a) + len(b) <= 12`` (or when ``exact`` forces it); otherwise a
    normal approximation with tie-corrected variance and continuity
    correction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n1, n2 = len(a), len(b)
    if n1 < 1 or n2 < 1:
        raise ValueError("both samples must be non-empty")
    ranks = sps.rankdata(np.concatenate([a, b]))
    w = ranks[:n1].sum()
    u = w - n1 * (n1 + 1) / 2
    n = n1 + n2
    if exact is None:
        exact = n <= EXACT_RANKSUM_MAX_N
    if exact:
        return float(u), ranksum_exact_p(ranks, n1)
    return float(u), ranksum_normal_p(ranks, n1)


def ranksum_exact_p(ranks, n1: int) -> float:
    ranks = np.asarray(ranks, dtype=float)
    n = len(ranks)
    center = n1 * (n + 1) / 2
    observed = abs(ranks[:n1].sum() - center)
    total = extreme = 0
    for combo in itertools.combinations(range(n), n1):
        total += 1
        if abs(ranks[list(combo)].sum() - center) >= observed - 1e-9:
            extreme += 1
    return extreme / total


def ranksum_normal_p(ranks, n1: int) -> float:
    ranks = np.asarray(ranks, dtype=float)
    n = len(ranks)
    n2 = n - n1
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2
    _, ties = np.unique(ranks, return_counts=True)
    var = n1 * n2 / 12.0 * ((n + 1) - (ties ** 3 - ties).sum() / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = max(abs(u - n1 * n2 / 2) - 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, 2 * sps.norm.sf(z)))


# -- report ---------------------------------------------------------------------

def agreement_report(ratings, expert_labels=None, q: float = 0.05) -> dict:
    """Every annotation statistic for a :class:`~adaffect.model.RatingMatrix`.

    ``expert_labels`` maps dimension name to a per-item sequence of
    ``"High"``/``"Low"`` labels and enables the High-vs-Low rank-sum tests.
    """
    out = {"alpha": {}, "kappa": {}, "pearson": None, "wilcoxon": {}}
    for dim in ("valence", "arousal"):
        grid = getattr(ratings, dim)
        try:
            out["alpha"][dim] = {"value": krippendorff_alpha(grid, "ordinal"), "metric": "ordinal"}
        except ValueError as e:
            out["alpha"][dim] = {"value": None, "reason": str(e)}
        out["kappa"][dim] = {}
        for scheme in ("per-rater-mean", "grand-mean"):
            if np.isnan(grid).any():
                out["kappa"][dim][scheme] = {"value": None, "reason": "incomplete rating grid"}
                continue
            try:
                out["kappa"][dim][scheme] = {"value": fleiss_kappa(threshold_labels(grid, scheme))}
            except ValueError as e:
                out["kappa"][dim][scheme] = {"value": None, "reason": str(e)}
    mv = np.nanmean(ratings.valence, axis=0)
    ma = np.nanmean(ratings.arousal, axis=0)
    ok = ~np.isnan(mv) & ~np.isnan(ma)
    tests = []
    try:
        r, p = pearson(ma[ok], mv[ok])
        tests.append(("pearson_arousal_valence", p))
        out["pearson"] = {"r": r, "p": p}
    except ValueError as e:
        out["pearson"] = {"r": None, "p": None, "reason": str(e)}
    if expert_labels:
        for dim in ("valence", "arousal"):
            labels = np.asarray(expert_labels[dim])
            means = mv if dim == "valence" else ma
            hi = means[(labels == "High") & ~np.isnan(means)]
            lo = means[(labels == "Low") & ~np.isnan(means)]
            if len(hi) and len(lo):
                u, p = wilcoxon_ranksum(hi, lo)
                out["wilcoxon"][dim] = {"U": u, "p": p, "n_high": int(len(hi)), "n_low": int(len(lo))}
                tests.append((f"wilcoxon_{dim}", p))
    flags = benjamini_hochberg([p for _, p in tests], q)
    out["fdr"] = {"q": q, "decisions": {name: bool(f) for (name, _), f in zip(tests, flags)}}
    return out
