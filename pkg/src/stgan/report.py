"""Static SVG charts for metric reports and training histories."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .metrics import MetricReport

WIDTH, HEIGHT, PAD = 640, 360, 48
COLORS = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb")


def _frame(title: str, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">')
    axes = (f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>'
            f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>')
    label = f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>'
    return "\n".join([head, label, axes, *body, "</svg>"]) + "\n"


def bar_chart(report: MetricReport, metric_family: str) -> str:
    """One bar per (model, embedding, metric) row whose metric starts with ``metric_family``."""
    rows = [r for r in report.sorted_rows() if r[2].startswith(metric_family)]
    if not rows:
        raise ValueError(f"no rows for metric family {metric_family!r}")
    span = WIDTH - 2 * PAD
    bw = span / len(rows)
    body = []
    for k, (model, emb, metric, value) in enumerate(rows):
        h = value * (HEIGHT - 2 * PAD)
        x = PAD + k * bw
        body.append(f'<rect x="{x + 2:.2f}" y="{HEIGHT - PAD - h:.2f}" width="{bw - 4:.2f}" '
                    f'height="{h:.2f}" fill="{COLORS[k % len(COLORS)]}"/>')
        body.append(f'<text x="{x + bw / 2:.2f}" y="{HEIGHT - PAD + 14}" text-anchor="middle" '
                    f'font-size="9">{escape(f"{model}/{emb}/{metric}")}</text>')
        body.append(f'<text x="{x + bw / 2:.2f}" y="{HEIGHT - PAD - h - 3:.2f}" text-anchor="middle" '
                    f'font-size="9">{value:.3f}</text>')
    return _frame(f"{metric_family} scores", body)


def line_chart(series: dict[str, Sequence[float]], title: str) -> str:
    """Polylines sharing one y-range; non-finite points are skipped."""
    finite = [v for ys in series.values() for v in ys if math.isfinite(v)]
    if not finite:
        raise ValueError("nothing to plot")
    lo, hi = min(finite), max(finite)
    if hi == lo:
        hi = lo + 1.0
    body = []
    for k, (name, ys) in enumerate(series.items()):
        n = max(len(ys) - 1, 1)
        pts = [f"{PAD + i / n * (WIDTH - 2 * PAD):.2f},{HEIGHT - PAD - (y - lo) / (hi - lo) * (HEIGHT - 2 * PAD):.2f}"
               for i, y in enumerate(ys) if math.isfinite(y)]
        color = COLORS[k % len(COLORS)]
        body.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(pts)}"/>')
        body.append(f'<text x="{WIDTH - PAD}" y="{PAD + 14 * k}" text-anchor="end" font-size="10" '
                    f'fill="{color}">{escape(name)}</text>')
    body.append(f'<text x="4" y="{PAD}" font-size="9">{hi:.3g}</text>')
    body.append(f'<text x="4" y="{HEIGHT - PAD}" font-size="9">{lo:.3g}</text>')
    return _frame(title, body)


def read_history(path: str | Path) -> dict[str, list[float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    cols = [c for c in rows[0] if c not in ("round", "epoch", "split")]
    return {c: [float(r[c]) if r[c] != "" else float("nan") for r in rows] for c in cols}


def write_report(report: MetricReport, out_dir: str | Path,
                 histories: dict[str, str | Path] | None = None) -> list[Path]:
    """Write report.csv plus one SVG per metric family and per history file."""
    if not report.rows:
        raise ValueError("empty report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "report.csv"]
    report.write(written[0])
    families = sorted({"bleu" if m.startswith("bleu") else "rouge" if m.startswith("rouge") else m
                       for _, _, m, _ in report.rows})
    for fam in families:
        path = out_dir / f"chart_{fam}.svg"
        path.write_text(bar_chart(report, fam), encoding="utf-8")
        written.append(path)
    for name, hist_path in (histories or {}).items():
        series = read_history(hist_path)
        if not series:
            continue
        path = out_dir / f"history_{name}.svg"
        path.write_text(line_chart(series, name), encoding="utf-8")
        written.append(path)
    return written
