"""Repeated group-aware cross-validation, F1 scoring and the results table."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .features import DesignMatrix, Window
from .learners import CLASSIFIERS, HyperGrid, fit_classifier, group_kfold, inner_cv_select
from .model import Affect, ChannelKind

log = logging.getLogger(__name__)

WINDOWS = (Window.ALL, Window.L30, Window.L10)
TASKS = (Affect.VALENCE, Affect.AROUSAL)
NA = "NA"


def f1_score(y_true, y_pred, positive=1) -> float:
    """Harmonic mean of precision and recall for ``positive``; 0 when undefined."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("empty label vectors")
    tp = np.sum((y_pred == positive) & (y_true == positive))
    fp = np.sum((y_pred == positive) & (y_true != positive))
    fn = np.sum((y_pred != positive) & (y_true == positive))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


@dataclass(frozen=True)
class CvPlan:
    repetitions: int = 10
    folds: int = 5
    seed: int = 0
    group_aware: bool = True
    inner_folds: int = 5
    aggregate: str = "frames"  # or "video-majority"
    spread: str = "folds"  # std over fold scores, or "repetitions" (of repetition means)
    stratify: bool = True  # deal videos into folds class by class

    @property
    def runs(self) -> int:
        return self.repetitions * self.folds


def plan_splits(groups, plan: CvPlan, labels=None) -> list:
    """Test masks for every run, ``[(repetition, fold, mask), ...]``.

    Repetition ``r`` shuffles with a generator seeded ``plan.seed + r``.
    ``labels`` enables class-stratified dealing when ``plan.stratify``.
    """
    groups = np.asarray(groups)
    out = []
    for r in range(plan.repetitions):
        rng = np.random.default_rng(plan.seed + r)
        if plan.group_aware:
            masks = group_kfold(groups, plan.folds, rng, labels if plan.stratify else None)
        else:
            idx = np.array_split(rng.permutation(len(groups)), plan.folds)
            masks = [np.isin(np.arange(len(groups)), ix) for ix in idx]
        out.extend((r, f, m) for f, m in enumerate(masks))
    return out


def _inner_seed(plan: CvPlan, rep: int, fold: int) -> int:
    return int(np.random.SeedSequence([plan.seed, rep, fold]).generate_state(1)[0])


def _majority(groups, labels) -> tuple:
    keys = list(dict.fromkeys(groups.tolist()))
    votes = np.array([int(np.mean(labels[groups == g]) >= 0.5) for g in keys])
    return keys, votes


@dataclass(frozen=True)
class Cell:
    mean: Optional[float]
    std: Optional[float]
    n: int = 0
    scores: Optional[tuple] = None
    note: str = ""

    @property
    def available(self) -> bool:
        return self.mean is not None


@dataclass
class EvalReport:
    cells: dict = field(default_factory=dict)  # (channel, classifier, task, window) -> Cell
    channels: list = field(default_factory=list)
    classifiers: list = field(default_factory=list)
    plan: Optional[CvPlan] = None

    def cell(self, channel, classifier, task, window) -> Cell:
        key = (ChannelKind(channel).value, classifier, Affect(task).value, Window(window).value)
        return self.cells.get(key, Cell(None, None, note="not run"))

    def peak(self, channel, task, window=Window.ALL) -> float:
        vals = [self.cell(channel, c, task, window).mean for c in self.classifiers]
        vals = [v for v in vals if v is not None]
        return max(vals) if vals else float("nan")


def _classifier_name(clf) -> str:
    return clf if isinstance(clf, str) else clf.name


def evaluate_design(design: DesignMatrix, classifier, plan: CvPlan, grid: HyperGrid = HyperGrid(),
                    standardize: bool = True) -> list:
    """F1 for every (repetition, fold) run of one design matrix and classifier."""
    X, y, groups = design.X, design.y, design.groups
    scores = []
    for rep, fold, test in plan_splits(groups, plan, y):
        train = ~test
        seed = _inner_seed(plan, rep, fold)
        if isinstance(classifier, str):
            params = inner_cv_select(X[train], y[train], groups[train], classifier, grid,
                                     k=plan.inner_folds, seed=seed, standardize=standardize,
                                     stratify=plan.stratify)
            model = fit_classifier(classifier, X[train], y[train], params, standardize=standardize, seed=seed)
        else:
            model = classifier.fit(X[train], y[train], groups[train], seed)
        pred = np.asarray(model.predict(X[test]))
        if plan.aggregate == "video-majority":
            _, truth = _majority(groups[test], y[test])
            _, votes = _majority(groups[test], pred)
            scores.append(f1_score(truth, votes))
        else:
            scores.append(f1_score(y[test], pred))
    return scores


def summarize(scores: Sequence[float], plan: CvPlan) -> Cell:
    s = np.asarray(scores, dtype=float)
    if plan.spread == "repetitions":
        per_rep = s.reshape(plan.repetitions, plan.folds).mean(axis=1)
        std = float(per_rep.std())
    else:
        std = float(s.std())
    return Cell(float(s.mean()), std, len(s), tuple(float(v) for v in s))


def run_protocol(designs: Mapping, classifiers: Sequence = CLASSIFIERS, plan: CvPlan = CvPlan(),
                 grid: HyperGrid = HyperGrid(), standardize: bool = True) -> EvalReport:
    """Run the repeated CV protocol over every design matrix and classifier.

    ``designs`` maps ``(channel, task, window)`` to a :class:`DesignMatrix`,
    or to ``None``/an exception for a cell that could not be built; such
    cells are reported as unavailable. ``classifiers`` holds built-in names
    (``"LDA"``, ``"LSVM"``, ``"RSVM"``) or objects with ``name`` and
    ``fit(X, y, groups, seed) -> predictor``.
    """
    report = EvalReport(plan=plan)
    names = [_classifier_name(c) for c in classifiers]
    report.classifiers = names
    channels = {ChannelKind(k[0]) for k in designs}
    report.channels = [c.value for c in ChannelKind if c in channels]
    for key in sorted(designs, key=lambda k: (list(ChannelKind).index(ChannelKind(k[0])),
                                              Affect(k[1]).value, list(Window).index(Window(k[2])))):
        channel, task, window = ChannelKind(key[0]), Affect(key[1]), Window(key[2])
        design = designs[key]
        for clf, name in zip(classifiers, names):
            ck = (channel.value, name, task.value, window.value)
            if design is None or isinstance(design, Exception) or len(design) == 0:
                report.cells[ck] = Cell(None, None, note=str(design) if design is not None else "empty design")
                continue
            n_groups = len(np.unique(design.groups))
            if plan.group_aware and n_groups < plan.folds:
                report.cells[ck] = Cell(None, None, note=f"{n_groups} videos < {plan.folds} folds")
                continue
            scores = evaluate_design(design, clf, plan, grid, standardize)
            report.cells[ck] = summarize(scores, plan)
            log.info("%s/%s/%s/%s F1 %.3f", *ck, report.cells[ck].mean)
    return report


# -- report files ------------------------------------------------------------

def _columns() -> list:
    cols = []
    for t in TASKS:
        for w in WINDOWS:
            cols += [f"{t.value}_{w.value.lower()}_mean", f"{t.value}_{w.value.lower()}_std"]
    for t in TASKS:
        for w in WINDOWS:
            cols.append(f"{t.value}_{w.value.lower()}_best")
    return cols


def _best_flags(report: EvalReport, channel, clf, task) -> list:
    means = [report.cell(channel, clf, task, w).mean for w in WINDOWS]
    present = [m for m in means if m is not None]
    top = max(present) if present else None
    return [m is not None and round(m, 4) == round(top, 4) for m in means]


def _fmt(v) -> str:
    return NA if v is None else f"{v:.4f}"


def report_rows(report: EvalReport) -> list:
    rows = []
    for ch in report.channels:
        for clf in report.classifiers:
            row = {"channel": ch, "classifier": clf}
            for t in TASKS:
                for w in WINDOWS:
                    c = report.cell(ch, clf, t, w)
                    row[f"{t.value}_{w.value.lower()}_mean"] = _fmt(c.mean)
                    row[f"{t.value}_{w.value.lower()}_std"] = _fmt(c.std)
            for t in TASKS:
                for w, flag in zip(WINDOWS, _best_flags(report, ch, clf, t)):
                    row[f"{t.value}_{w.value.lower()}_best"] = "true" if flag else "false"
            rows.append(row)
    return rows


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["channel", "classifier"] + _columns(), lineterminator="\n")
    writer.writeheader()
    writer.writerows(report_rows(report))
    return buf.getvalue()


def report_json(report: EvalReport) -> str:
    rows = []
    for ch in report.channels:
        for clf in report.classifiers:
            cells = {}
            for t in TASKS:
                flags = _best_flags(report, ch, clf, t)
                for w, flag in zip(WINDOWS, flags):
                    c = report.cell(ch, clf, t, w)
                    cells.setdefault(t.value, {})[w.value] = {
                        "mean": None if c.mean is None else round(c.mean, 6),
                        "std": None if c.std is None else round(c.std, 6),
                        "n": c.n, "best": flag, "note": c.note,
                        "scores": None if c.scores is None else [round(s, 6) for s in c.scores],
                    }
            rows.append({"channel": ch, "classifier": clf, "cells": cells})
    plan = None if report.plan is None else report.plan.__dict__
    return json.dumps({"plan": plan, "rows": rows}, indent=1, sort_keys=True) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def emit_report(report: EvalReport, out_dir, formats=("csv", "json")) -> list:
    """Write ``results.csv`` / ``results.json``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if "csv" in formats:
        paths.append(out / "results.csv")
        _atomic_write(paths[-1], report_csv(report))
    if "json" in formats:
        paths.append(out / "results.json")
        _atomic_write(paths[-1], report_json(report))
    return paths


def parse_report_csv(text: str) -> EvalReport:
    """Rebuild the summary table (means and stds only) from ``results.csv`` text."""
    report = EvalReport()
    for row in csv.DictReader(io.StringIO(text)):
        ch, clf = row["channel"], row["classifier"]
        if ch not in report.channels:
            report.channels.append(ch)
        if clf not in report.classifiers:
            report.classifiers.append(clf)
        for t in TASKS:
            for w in WINDOWS:
                m, s = row[f"{t.value}_{w.value.lower()}_mean"], row[f"{t.value}_{w.value.lower()}_std"]
                if m != NA:
                    report.cells[(ch, clf, t.value, w.value)] = Cell(float(m), float(s))
    return report
