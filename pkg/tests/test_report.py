import re

import pytest

from stgan.metrics import MetricReport
from stgan.report import bar_chart, line_chart, read_history, write_report


def _report(*rows):
    r = MetricReport()
    for row in rows:
        r.add(*row)
    return r


def test_write_report_files(tmp_path):
    rep = _report(("gan", "st", "bleu2", 0.3), ("gan", "st", "rougeL", 0.4), ("gan", "st", "meteor", 0.2))
    hist = tmp_path / "h.csv"
    hist.write_text("round,d_loss,g_loss,grad_norm\n1,1.0,2.0,\n2,0.5,1.5,\n3,0.4,1.2,\n")
    paths = write_report(rep, tmp_path / "out", {"gan": hist})
    names = sorted(p.name for p in paths)
    assert names == ["chart_bleu.svg", "chart_meteor.svg", "chart_rouge.svg", "history_gan.svg", "report.csv"]
    assert (tmp_path / "out" / "report.csv").read_text().count("\n") == 4


def test_one_row_report_csv(tmp_path):
    write_report(_report(("gan", "st", "bleu1", 0.5)), tmp_path)
    assert (tmp_path / "report.csv").read_text() == "model,embedding,metric,value\ngan,st,bleu1,0.500000\n"


def test_empty_and_invalid_reports_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_report(MetricReport(), tmp_path)
    with pytest.raises(ValueError):
        _report(("gan", "st", "bleu1", 1.2))
    assert not (tmp_path / "report.csv").exists()


def test_history_polyline_has_one_point_per_round(tmp_path):
    svg = line_chart({"d_loss": [3.0, 2.0, 1.0, 0.5, 0.4]}, "losses")
    points = re.search(r'points="([^"]*)"', svg).group(1).split()
    assert len(points) == 5
    hist = tmp_path / "h.csv"
    hist.write_text("epoch,split,loss\n1,train,3.0\n2,train,2.0\n")
    assert read_history(hist) == {"loss": [3.0, 2.0]}


def test_bar_chart_needs_rows():
    with pytest.raises(ValueError):
        bar_chart(_report(("gan", "st", "bleu1", 0.5)), "rouge")
    assert bar_chart(_report(("gan", "st", "bleu1", 0.5)), "bleu").startswith("<svg")
