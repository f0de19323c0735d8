"""Plain-text SVG line charts of training curves (no plotting dependency)."""

import csv
import math
from xml.sax.saxutils import escape

from .exceptions import ParseError

SERIES = ("train_loss", "val_loss", "val_acc")
COLORS = {"train_loss": "#1f77b4", "val_loss": "#ff7f0e", "val_acc": "#2ca02c"}


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["epoch", *SERIES]
        if reader.fieldnames != expected:
            raise ParseError(f"{path}: metrics header must be {','.join(expected)}", line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append({"epoch": int(row["epoch"]), **{k: float(row[k]) for k in SERIES}})
            except (TypeError, ValueError):
                raise ParseError(f"{path}: malformed metrics row", line=lineno) from None
    return rows


def nice_ticks(lo, hi, target=5):
    """Round-number ticks covering [lo, hi]."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo, hi = 0.0, 1.0
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    raw = (hi - lo) / max(target - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    stop = math.ceil(hi / step) * step
    count = int(round((stop - start) / step))
    return [round(start + i * step, 12) for i in range(count + 1)]


def render_svg(rows, width=640, height=400, title="training curves"):
    left, right, top, bottom = 60, 130, 30, 45
    pw, ph = width - left - right, height - top - bottom
    epochs = [r["epoch"] for r in rows]
    values = [r[s] for r in rows for s in SERIES if math.isfinite(r[s])]
    yt = nice_ticks(min(values, default=0.0), max(values, default=1.0))
    xt = nice_ticks(min(epochs, default=0), max(epochs, default=1))
    x0, x1, y0, y1 = xt[0], xt[-1], yt[0], yt[-1]

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in yt:
        y = sy(t)
        out.append(f'<line class="ytick" x1="{left - 4}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{t:g}</text>')
    for t in xt:
        x = sx(t)
        out.append(f'<line class="xtick" x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{t:g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle">epoch</text>')

    for idx, name in enumerate(SERIES):
        pts = [(r["epoch"], r[name]) for r in rows if math.isfinite(r[name])]
        color = COLORS[name]
        out.append(f'<g class="series" data-series="{name}">')
        if len(pts) > 1:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in pts:
            out.append(f'<circle class="point" data-series="{name}" cx="{sx(x):.2f}" cy="{sy(y):.2f}" '
                       f'r="2" fill="{color}"/>')
        out.append("</g>")
        ly = top + 12 + 16 * idx
        out.append(f'<line x1="{left + pw + 12}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 36}" y="{ly}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(metrics_csv, svg_path, title="training curves"):
    rows = read_metrics(metrics_csv)
    with open(svg_path, "w") as fh:
        fh.write(render_svg(rows, title=title))
    return len(rows)
