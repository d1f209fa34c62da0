import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaffect.evaluation import (NA, CvPlan, emit_report, f1_score, parse_report_csv, plan_splits, report_csv,
                                 run_protocol)
from adaffect.features import DesignMatrix, FrameKey, Window
from adaffect.learners import HyperGrid
from adaffect.model import Affect, ChannelKind
from oracles import f1_confusion


class Oracle:
    """Reads the true label from column 0 of the features."""

    name = "Oracle"

    def fit(self, X, y, groups, seed):
        return self

    def predict(self, X):
        return X[:, 0].astype(int)


def design(n_videos=12, frames=4, seed=0, channel=ChannelKind.VIDEO, signal=1.0, mixed=False):
    rng = np.random.default_rng(seed)
    groups = np.repeat([f"v{i}" for i in range(n_videos)], frames)
    y = np.tile(np.arange(frames) % 2, n_videos) if mixed else np.repeat(np.arange(n_videos) % 2, frames)
    X = np.c_[y, rng.normal(size=(len(y), 2)) + signal * y[:, None]]
    keys = tuple(FrameKey(g, i % frames) for i, g in enumerate(groups))
    return DesignMatrix(X, y, groups, keys, channel)


# -- F1 ----------------------------------------------------------------------

def test_f1_against_confusion_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n = int(rng.integers(1, 30))
        t, p = rng.integers(0, 2, n), rng.integers(0, 2, n)
        assert f1_score(t, p) == pytest.approx(f1_confusion(t.tolist(), p.tolist()), abs=1e-12)


def test_f1_examples():
    assert f1_score([1, 0, 1], [1, 0, 1]) == 1.0
    assert f1_score([1] * 6 + [0] * 4, [1] * 10) == pytest.approx(0.75)
    assert f1_score([0, 0], [0, 0]) == 0.0
    with pytest.raises(ValueError):
        f1_score([1, 0], [1])
    with pytest.raises(ValueError):
        f1_score([], [])


# -- splits ------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(5, 40), st.integers(1, 6), st.integers(0, 2 ** 32 - 1), st.integers(2, 5), st.booleans())
def test_no_leakage_and_balanced_folds(n_groups, max_frames, seed, folds, stratify):
    rng = np.random.default_rng(seed)
    groups = np.concatenate([[g] * int(rng.integers(1, max_frames + 1)) for g in range(n_groups)])
    labels = (rng.random(n_groups) < 0.4).astype(int)[groups]
    splits = plan_splits(groups, CvPlan(repetitions=3, folds=folds, seed=seed, stratify=stratify), labels)
    assert len(splits) == 3 * folds
    for r in range(3):
        masks = [m for rep, _, m in splits if rep == r]
        assert np.array_equal(np.sum(masks, axis=0), np.ones(len(groups)))
        sizes = [len(set(groups[m])) for m in masks]
        assert max(sizes) - min(sizes) <= 1
        for m in masks:
            assert set(groups[m]).isdisjoint(groups[~m])


def test_plan_is_fifty_runs():
    assert CvPlan().runs == 50


# -- protocol ----------------------------------------------------------------

def keyed(d, task=Affect.VALENCE, window=Window.ALL):
    return {(d.channel.value, task.value, window.value): d}


def test_fifty_scores_per_cell_and_oracle_is_perfect():
    rep = run_protocol(keyed(design()), [Oracle()], CvPlan())
    c = rep.cell(ChannelKind.VIDEO, "Oracle", Affect.VALENCE, Window.ALL)
    assert c.n == 50 and len(c.scores) == 50
    assert c.mean == 1.0 and c.std == 0.0


def test_unstratified_folds_can_punish_perfect_predictions():
    # a fold holding only Low videos scores 0 under the F1 convention
    rep = run_protocol(keyed(design()), [Oracle()], CvPlan(stratify=False))
    assert rep.cell("Video", "Oracle", "valence", "All").mean < 1.0
    mixed = run_protocol(keyed(design(mixed=True)), [Oracle()], CvPlan(stratify=False))
    assert mixed.cell("Video", "Oracle", "valence", "All").mean == 1.0


def test_spread_over_repetition_means():
    scores = run_protocol(keyed(design(signal=0.3)), ["LDA"], CvPlan(repetitions=4, seed=1))
    alt = run_protocol(keyed(design(signal=0.3)), ["LDA"], CvPlan(repetitions=4, seed=1, spread="repetitions"))
    a = scores.cell("Video", "LDA", "valence", "All")
    b = alt.cell("Video", "LDA", "valence", "All")
    per_rep = np.array(a.scores).reshape(4, 5).mean(axis=1)
    assert b.mean == a.mean and b.std == pytest.approx(per_rep.std())


def test_learned_classifiers_run_and_stay_in_range():
    rep = run_protocol(keyed(design(signal=3.0)), ["LDA", "LSVM", "RSVM"], CvPlan(repetitions=2),
                       HyperGrid(C=(0.1, 1.0), gamma=(0.1, 1.0)))
    for clf in ("LDA", "LSVM", "RSVM"):
        c = rep.cell("Video", clf, "valence", "All")
        assert 0.9 <= c.mean <= 1 and c.std >= 0


def test_unavailable_cells_do_not_stop_the_run():
    designs = keyed(design())
    designs[("Gist", "valence", "All")] = ValueError("no rows")
    designs[("Fc8", "valence", "All")] = design(n_videos=3, channel=ChannelKind.FC8)
    rep = run_protocol(designs, [Oracle()], CvPlan(repetitions=1))
    assert rep.cell("Video", "Oracle", "valence", "All").mean == 1.0
    assert not rep.cell("Gist", "Oracle", "valence", "All").available
    assert "3 videos" in rep.cell("Fc8", "Oracle", "valence", "All").note


# -- report files ------------------------------------------------------------

def full_na_report():
    designs = {(c.value, t.value, w.value): None for c in ChannelKind for t in Affect for w in Window}
    return run_protocol(designs, ["LDA", "LSVM", "RSVM"], CvPlan(repetitions=1))


def test_thirty_rows_in_channel_order_with_na():
    text = report_csv(full_na_report())
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 30
    assert [r["channel"] for r in rows[::3]] == [c.value for c in ChannelKind]
    assert all(r["valence_all_mean"] == NA for r in rows)


def test_report_bytes_reproducible(tmp_path):
    designs = {**keyed(design(signal=0.5)), **keyed(design(signal=0.5, seed=1), window=Window.L10)}
    a = emit_report(run_protocol(designs, ["LDA", Oracle()], CvPlan(repetitions=3, seed=5)), tmp_path / "a")
    b = emit_report(run_protocol(designs, ["LDA", Oracle()], CvPlan(repetitions=3, seed=5)), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    doc = json.loads(a[1].read_text())
    cell = doc["rows"][0]["cells"]["valence"]
    assert len(cell["All"]["scores"]) == 15 and cell["L30"]["mean"] is None


def test_csv_round_trip_is_byte_identical():
    designs = {**keyed(design(signal=0.5)), **keyed(design(signal=0.2), window=Window.L30)}
    text = report_csv(run_protocol(designs, ["LDA", Oracle()], CvPlan(repetitions=2)))
    assert report_csv(parse_report_csv(text)) == text
    text = report_csv(full_na_report())
    assert report_csv(parse_report_csv(text)) == text


def test_best_flag_marks_row_maximum_over_windows():
    designs = {**keyed(design(signal=0.0)), **keyed(design(), window=Window.L10)}
    rows = list(csv.DictReader(io.StringIO(report_csv(run_protocol(designs, [Oracle()], CvPlan(repetitions=1))))))
    assert rows[0]["valence_l10_best"] == "true" and rows[0]["valence_l30_best"] == "false"
