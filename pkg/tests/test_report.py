import csv
import io
import json

import numpy as np

from semgsvm.harness import ExperimentReport, ResultCell, rank_movements
from semgsvm.report import ACCURACY_COLUMNS, accuracy_csv, figure12_csv, figure13_csv, figure14_csv, report_json, write_report


def _report():
    cm = np.zeros((18, 18), dtype=np.int64)
    cm[0, 0], cm[1, 1], cm[1, 2], cm[2, 2] = 5, 3, 1, 4
    ok = ResultCell(1, 1, 2, (2, 3, 5), 3, "MAV", True, 100.0 * 12 / 13, 16.0, 0.25, 91.5, cm, rank_movements(cm))
    bad = ResultCell(2, 1, 2, (2,), 3, "WL", False, None, None, None, status="failed", reason="SearchError: every grid cell failed")
    return ExperimentReport([ok, bad], [{"part": 1}], seed=5, config={"seed": 5}, notes=["n"])


def test_accuracy_csv_layout():
    rows = list(csv.reader(io.StringIO(accuracy_csv(_report()))))
    assert rows[0] == ACCURACY_COLUMNS
    assert rows[1] == ["1", "2", "2;3;5", "3", "MAV", "on", "92.3077", "16.0", "0.25", "ok"]
    assert rows[2][6:] == ["", "", "", "failed"]


def test_json_carries_confusion_ranking_and_reason():
    doc = json.loads(report_json(_report()))
    assert doc["seed"] == 5 and doc["config"] == {"seed": 5}
    ok, bad = doc["cells"]
    assert ok["confusion"][1][2] == 1
    assert ok["ranking"][:3] == [0, 2, 1]
    assert bad["reason"].startswith("SearchError")
    assert "confusion" not in bad


def test_figure_tables():
    rep = _report()
    f12 = list(csv.DictReader(io.StringIO(figure12_csv(rep))))
    assert f12[0]["session"] == "2" and f12[0]["smoothing"] == "S"
    f13 = list(csv.DictReader(io.StringIO(figure13_csv(rep))))
    assert sum(int(r["count"]) for r in f13) == 13
    f14 = list(csv.DictReader(io.StringIO(figure14_csv(rep))))
    assert len(f14) == 18 and f14[0]["label"] == "0"


def test_write_report_selects_figures(tmp_path):
    written = write_report(_report(), tmp_path, figures=(13,))
    assert sorted(p.name for p in written) == ["accuracy.csv", "figure13.csv", "report.json"]
    again = tmp_path / "again"
    write_report(_report(), again, figures=(13,))
    assert (again / "report.json").read_bytes() == (tmp_path / "report.json").read_bytes()
