import json

import pandas as pd
import pytest

from lesionsynth import reporting
from lesionsynth.evalharness import RunResult, summarize


@pytest.fixture
def report():
    runs = {
        "Real": [RunResult(run=i, auc=a, seed=10 + i) for i, a in enumerate([0.80, 0.82, 0.81])],
        "Real+Instance+PGAN": [RunResult(run=i, auc=a, seed=10 + i) for i, a in enumerate([0.85, 0.88, 0.86])],
    }
    return summarize(runs, {"Real": 2346, "Real+Instance+PGAN": 7038}, "Real+Instance+PGAN")


SIZES = {"Real": 2346, "Real+Instance+PGAN": 7038}


def test_runs_frame_has_one_row_per_run(report):
    frame = reporting.runs_to_frame(report, SIZES)
    assert list(frame.columns) == ["spec", "run", "seed", "auc", "size"]
    assert len(frame) == 6
    assert frame[frame["spec"] == "Real"]["seed"].tolist() == [10, 11, 12]


def test_report_rebuilds_from_saved_runs(tmp_path, report):
    path = reporting.save_runs_to_csv(report, SIZES, str(tmp_path))
    rebuilt = reporting.report_from_runs(pd.read_csv(path), report.reference, 0.05)

    assert [row.name for row in rebuilt.rows] == [row.name for row in report.rows]
    for a, b in zip(rebuilt.rows, report.rows):
        assert a.mean_auc == pytest.approx(b.mean_auc)
        assert a.size == b.size
        assert a.p_value == (pytest.approx(b.p_value) if b.p_value is not None else None)


def test_report_table_formats_percentages(report):
    table = reporting.report_table(report)
    real = table[table["Training Data"] == "Real"].iloc[0]

    assert real["AUC (%)"] == "81.0 ± 1.0"
    assert real["Training Data Size"] == 2346
    assert real["p-value"] != "-"
    assert table[table["Training Data"] == "Real+Instance+PGAN"]["p-value"].iloc[0] == "-"


def test_format_p_value():
    assert reporting.format_p_value(None) == "-"
    assert reporting.format_p_value(0.00388) == "3.9e-03"


def test_save_report_writes_csv_and_json(tmp_path, report):
    csv_path, json_path = reporting.save_report(report, str(tmp_path))

    document = json.loads(open(json_path, encoding="utf-8").read())
    assert document["reference"] == "Real+Instance+PGAN"
    assert document["rows"][0]["training_data"] == "Real"
    assert document["rows"][0]["runs"] == [0.80, 0.82, 0.81]
    assert pd.read_csv(csv_path)["Training Data"].tolist() == ["Real", "Real+Instance+PGAN"]


def test_print_report_lists_every_row(capsys, report):
    reporting.print_report(report)
    out = capsys.readouterr().out
    assert "Real+Instance+PGAN" in out
    assert "2,346" in out
