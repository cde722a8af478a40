"""Report and plot-data writers for protocol results."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .harness import ExperimentReport, per_class_recall
from .synth import session_of

REPORT_FORMAT_VERSION = 1
ACCURACY_COLUMNS = ["part", "train_acq", "validation_acqs", "test_acq", "feature", "smoothing", "accuracy", "C", "gamma", "status"]
FIGURES = (12, 13, 14)


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _acc(v) -> str:
    return "" if v is None else f"{v:.4f}"


def _on_off(flag: bool) -> str:
    return "on" if flag else "off"


def _csv(rows, header) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def accuracy_csv(report: ExperimentReport) -> str:
    rows = [
        [c.part, c.train_acq, ";".join(map(str, c.validation_acqs)), c.test_acq, c.feature,
         _on_off(c.smoothing), _acc(c.accuracy), _num(c.c), _num(c.gamma), c.status]
        for c in report.cells
    ]
    return _csv(rows, ACCURACY_COLUMNS)


def report_json(report: ExperimentReport) -> str:
    cells = []
    for c in report.cells:
        entry = {
            "part": c.part,
            "day": c.day,
            "train_acq": c.train_acq,
            "validation_acqs": list(c.validation_acqs),
            "test_acq": c.test_acq,
            "feature": c.feature,
            "smoothing": c.smoothing,
            "accuracy": c.accuracy,
            "C": c.c,
            "gamma": c.gamma,
            "validation_accuracy": c.validation_accuracy,
            "status": c.status,
        }
        if c.reason:
            entry["reason"] = c.reason
        if c.confusion is not None:
            entry["confusion"] = c.confusion.tolist()
            recall = per_class_recall(c.confusion)
            entry["recall"] = [None if np.isnan(r) else float(r) for r in recall]
            entry["ranking"] = list(c.ranking)
        cells.append(entry)
    doc = {
        "format": "semgsvm-report",
        "version": REPORT_FORMAT_VERSION,
        "seed": report.seed,
        "config": report.config,
        "plans": report.plans,
        "notes": report.notes,
        "cells": cells,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def figure12_csv(report: ExperimentReport) -> str:
    """Grouped accuracies: one bar per (day, part, feature, smoothing, session)."""
    rows = []
    for c in report.cells:
        _, session = session_of(c.test_acq)
        rows.append([c.day, c.part, c.train_acq, c.test_acq, session, c.feature,
                     "S" if c.smoothing else "nS", _acc(c.accuracy)])
    return _csv(rows, ["day", "part", "train_acq", "test_acq", "session", "feature", "smoothing", "accuracy"])


def figure13_csv(report: ExperimentReport) -> str:
    """Confusion matrices in long form."""
    rows = []
    for c in report.cells:
        if c.confusion is None:
            continue
        for t, p in zip(*np.nonzero(c.confusion)):
            rows.append([c.part, c.train_acq, c.test_acq, c.feature, _on_off(c.smoothing), int(t), int(p), int(c.confusion[t, p])])
    return _csv(rows, ["part", "train_acq", "test_acq", "feature", "smoothing", "truth", "predicted", "count"])


def figure14_csv(report: ExperimentReport) -> str:
    """Movement rankings by per-class recall."""
    rows = []
    for c in report.cells:
        if c.confusion is None:
            continue
        recall = per_class_recall(c.confusion)
        for rank, label in enumerate(c.ranking, start=1):
            r = recall[label]
            rows.append([c.part, c.train_acq, c.test_acq, c.feature, _on_off(c.smoothing), rank, label,
                         "" if np.isnan(r) else f"{100 * r:.4f}"])
    return _csv(rows, ["part", "train_acq", "test_acq", "feature", "smoothing", "rank", "label", "recall"])


_FIGURE_WRITERS = {12: figure12_csv, 13: figure13_csv, 14: figure14_csv}


def write_report(report: ExperimentReport, out_dir, figures=FIGURES) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)

    put("accuracy.csv", accuracy_csv(report))
    put("report.json", report_json(report))
    for fig in figures:
        put(f"figure{fig}.csv", _FIGURE_WRITERS[int(fig)](report))
    return written
