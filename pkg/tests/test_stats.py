import itertools

import numpy as np
import pytest
import scipy.stats as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from adaffect.model import parse_manifest
from adaffect.stats import (UndefinedAgreementError, UndefinedCorrelationError, agreement_report,
                            benjamini_hochberg, fleiss_kappa, krippendorff_alpha, pearson, pearson_fdr,
                            ranksum_exact_p, ranksum_normal_p, threshold_labels, wilcoxon_ranksum)
from conftest import toy_manifest_doc
from oracles import bh_enumeration, fleiss_expanded, krippendorff_pairwise


def random_grid(rng, m, n, k=5, missing=0.0):
    g = rng.integers(0, k, (m, n)).astype(float)
    g[rng.random((m, n)) < missing] = np.nan
    return g


# -- Krippendorff ----------------------------------------------------------------

@pytest.mark.parametrize("metric", ["ordinal", "nominal", "interval"])
def test_alpha_matches_pairwise_oracle(metric):
    rng = np.random.default_rng(1)
    done = 0
    while done < 100:
        g = random_grid(rng, int(rng.integers(2, 6)), int(rng.integers(2, 12)), int(rng.integers(2, 6)), 0.2)
        if ((~np.isnan(g)).sum(axis=0) >= 2).sum() < 2:
            continue
        try:
            ref = krippendorff_pairwise(g, metric)
        except ZeroDivisionError:
            continue
        if not np.isfinite(ref):
            continue
        assert krippendorff_alpha(g, metric) == pytest.approx(ref, abs=1e-9)
        done += 1


def test_alpha_hand_matrix():
    g = np.array([[1, 2, 3, 3], [1, 2, 3, 4], [np.nan, 3, 3, 4]], float)
    assert krippendorff_alpha(g) == pytest.approx(krippendorff_pairwise(g), abs=1e-12)


def test_alpha_identical_raters():
    v = [0, 1, 2, 4, 3, 1]
    assert krippendorff_alpha([v, v]) == pytest.approx(1.0)


def test_alpha_undefined():
    with pytest.raises(UndefinedAgreementError):
        krippendorff_alpha(np.full((3, 4), 2.0))
    with pytest.raises(ValueError):
        krippendorff_alpha([[1, np.nan], [np.nan, 2]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(-3, 3), st.sampled_from([1, 2]))
def test_alpha_invariances(seed, shift, scale):
    rng = np.random.default_rng(seed)
    g = random_grid(rng, 4, 10, 5, 0.1)
    try:
        a = krippendorff_alpha(g)
    except ValueError:
        return
    assert krippendorff_alpha(g[rng.permutation(4)]) == pytest.approx(a, abs=1e-12)
    assert krippendorff_alpha(g[:, rng.permutation(10)]) == pytest.approx(a, abs=1e-12)
    # ordinal metric only sees rank order and marginals
    assert krippendorff_alpha(scale * g + shift) == pytest.approx(a, abs=1e-12)


# -- Fleiss ------------------------------------------------------------------

def test_kappa_matches_expanded_oracle():
    rng = np.random.default_rng(2)
    done = 0
    while done < 100:
        g = random_grid(rng, int(rng.integers(2, 7)), int(rng.integers(2, 15)), int(rng.integers(2, 4)))
        if len(np.unique(g)) < 2:
            continue
        assert fleiss_kappa(g) == pytest.approx(fleiss_expanded(g), abs=1e-9)
        done += 1


def test_kappa_hand_grid():
    g = np.array([[1, 0, 1, 1, 0, 0], [1, 0, 1, 0, 0, 0], [1, 1, 1, 1, 0, 0], [1, 0, 0, 1, 0, 1]])
    assert fleiss_kappa(g) == pytest.approx(fleiss_expanded(g), abs=1e-12)


def test_kappa_perfect_and_undefined():
    assert fleiss_kappa([[1, 0, 1], [1, 0, 1], [1, 0, 1]]) == pytest.approx(1.0)
    with pytest.raises(UndefinedAgreementError):
        fleiss_kappa(np.ones((3, 5)))
    with pytest.raises(ValueError):
        fleiss_kappa([[1, np.nan], [0, 1]])


def test_kappa_null_near_zero():
    g = np.random.default_rng(3).integers(0, 2, (5, 1000))
    assert abs(fleiss_kappa(g)) < 0.05


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_kappa_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 2, (4, 9))
    if len(np.unique(g)) < 2:
        return
    k = fleiss_kappa(g)
    assert fleiss_kappa(g[rng.permutation(4)]) == pytest.approx(k, abs=1e-12)
    assert fleiss_kappa(g[:, rng.permutation(9)]) == pytest.approx(k, abs=1e-12)


# -- thresholds ----------------------------------------------------------------

def test_threshold_examples():
    assert threshold_labels([[1, 1, 3]]).tolist() == [[0, 0, 1]]
    assert not threshold_labels(np.full((2, 3), 2.0)).any()
    g = np.array([[0, 3, 4, 1]], float)
    assert np.array_equal(threshold_labels(g, "grand-mean"), threshold_labels(g, "per-rater-mean"))
    g = np.array([[0, 4], [2, 2]], float)
    assert threshold_labels(g, "grand-mean").tolist() == [[0, 1], [0, 0]]
    with pytest.raises(ValueError):
        threshold_labels([[1, np.nan]])
    assert np.isnan(threshold_labels([[1, np.nan, 3]], "grand-mean")[0, 1])


# -- BH and Pearson ------------------------------------------------------------

def test_bh_four_value_family():
    p = [0.01, 0.02, 0.04, 0.30]
    # p_(3) = 0.04 > 3 * 0.05 / 4, so the step-up stops at k = 2
    assert bh_enumeration(p, 0.05) == [True, True, False, False]
    assert benjamini_hochberg(p, 0.05).tolist() == [True, True, False, False]
    assert benjamini_hochberg(p, 0.054).tolist() == [True, True, True, False]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=15), st.floats(0.001, 0.3))
def test_bh_matches_enumeration_and_is_monotone(p, q):
    assert benjamini_hochberg(p, q).tolist() == bh_enumeration(p, q)
    loose = benjamini_hochberg(p, min(1.0, 2 * q))
    assert np.all(loose >= benjamini_hochberg(p, q))


def test_pearson_extremes():
    x = np.arange(10.0)
    assert pearson(x, x)[0] == 1.0
    assert pearson(x, -x + 0)[0] == -1.0
    with pytest.raises(UndefinedCorrelationError):
        pearson(x, np.ones(10))
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2])


def test_pearson_against_scipy(rng):
    for _ in range(50):
        n = int(rng.integers(3, 40))
        x, y = rng.normal(size=n), rng.normal(size=n)
        ref = sps.pearsonr(x, y)
        r, p = pearson(x, y)
        assert r == pytest.approx(ref[0], abs=1e-12) and p == pytest.approx(ref[1], rel=1e-9)


def test_pearson_fdr_family():
    x = np.arange(20.0)
    y = x + np.random.default_rng(0).normal(0, 5, 20)
    r, p, flags = pearson_fdr(x, y, [(0.1, 0.6), (0.2, 0.03)])
    assert flags.tolist() == bh_enumeration([p, 0.6, 0.03], 0.05)


# -- rank sum ------------------------------------------------------------------

def exact_by_rank_assignment(a, b):
    """All C(n, n1) ways to hand the pooled midranks to the first sample."""
    ranks = sps.rankdata(np.r_[a, b])
    n, n1 = len(ranks), len(a)
    centre = n1 * (n + 1) / 2
    obs = abs(ranks[:n1].sum() - centre)
    sums = [ranks[list(c)].sum() for c in itertools.combinations(range(n), n1)]
    return np.mean([abs(s - centre) >= obs - 1e-9 for s in sums])


def test_ranksum_three_vs_three():
    u, p = wilcoxon_ranksum([1, 2, 3], [10, 11, 12])
    assert u == 0 and p == pytest.approx(0.1)
    assert exact_by_rank_assignment([1, 2, 3], [10, 11, 12]) == pytest.approx(0.1)


def test_ranksum_identical_samples():
    assert wilcoxon_ranksum([1, 2, 2, 5], [1, 2, 2, 5])[1] >= 0.99
    a = np.random.default_rng(0).normal(size=40)
    assert wilcoxon_ranksum(a, a)[1] >= 0.99


def test_ranksum_large_shift():
    rng = np.random.default_rng(0)
    assert wilcoxon_ranksum(rng.normal(1, 1, 100), rng.normal(0, 1, 100))[1] < 0.001


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=6), st.lists(st.integers(0, 4), min_size=1, max_size=6))
def test_exact_path_matches_enumeration(a, b):
    assert wilcoxon_ranksum(a, b)[1] == pytest.approx(exact_by_rank_assignment(a, b), abs=1e-12)


def test_normal_path_matches_scipy(rng):
    for _ in range(30):
        a = rng.integers(0, 5, int(rng.integers(7, 40)))
        b = rng.integers(0, 5, int(rng.integers(7, 40)))
        u, p = wilcoxon_ranksum(a, b)
        ref = sps.mannwhitneyu(a, b, use_continuity=True, method="asymptotic")
        assert u == pytest.approx(ref.statistic) and p == pytest.approx(ref.pvalue, rel=1e-9)


def test_exact_and_normal_close_at_crossover(rng):
    worst = 0.0
    for _ in range(30):
        a, b = rng.normal(size=6), rng.normal(0.8, 1, size=6)
        ranks = sps.rankdata(np.r_[a, b])
        worst = max(worst, abs(ranksum_exact_p(ranks, 6) - ranksum_normal_p(ranks, 6)))
    assert worst <= 0.02


# -- report --------------------------------------------------------------------

def test_agreement_report_complete_and_missing():
    m = parse_manifest(toy_manifest_doc(8, n_raters=3))
    labels = {"valence": [v.expert_valence.value for v in m.videos],
              "arousal": [v.expert_arousal.value for v in m.videos]}
    rep = agreement_report(m.ratings, labels)
    assert rep["alpha"]["valence"]["value"] is not None
    assert set(rep["kappa"]["valence"]) == {"per-rater-mean", "grand-mean"}
    assert "pearson_arousal_valence" in rep["fdr"]["decisions"]
    doc = toy_manifest_doc(8, n_raters=3)
    doc["ratings"]["valence"][0][0] = None
    rep = agreement_report(parse_manifest(doc).ratings)
    assert rep["kappa"]["valence"]["per-rater-mean"]["value"] is None
    assert rep["alpha"]["valence"]["value"] is not None
