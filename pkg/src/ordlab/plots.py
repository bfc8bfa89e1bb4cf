"""Dependency-free SVG line charts for metrics CSV files."""

import csv
import math
from pathlib import Path

from .errors import FormatError

WIDTH, HEIGHT, MARGIN = 640, 400, 56
TEXT_COLUMNS = {"run_id", "event"}


def read_numeric_csv(path, x="epoch"):
    """Header plus float rows; non-numeric entries outside text columns raise with the line number."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    header = rows[0]
    if x not in header:
        raise FormatError(f"{path}: missing column {x!r}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
        parsed = {}
        for name, value in zip(header, row):
            if name in TEXT_COLUMNS:
                continue
            try:
                parsed[name] = float(value)
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: column {name!r} is not numeric ({value!r})") from None
        data.append(parsed)
    return header, data


def _fmt(v):
    return f"{v:.3f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def render_svg(title, xs, ys, x_label="epoch"):
    # stable sort keeps the x-axis monotone even if rows arrive out of order
    points = sorted(((x, y) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)), key=lambda p: p[0])
    x_lo = min((p[0] for p in points), default=0.0)
    x_hi = max((p[0] for p in points), default=1.0)
    y_lo = min((p[1] for p in points), default=0.0)
    y_hi = max((p[1] for p in points), default=1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    plot_w, plot_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def sx(x):
        return MARGIN + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * plot_h

    poly = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in points)
    bottom, right = HEIGHT - MARGIN, WIDTH - MARGIN
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>',
        f'<line x1="{MARGIN}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{bottom}" stroke="black"/>',
        f'<text x="{MARGIN}" y="{bottom + 18}" font-family="sans-serif" font-size="11">{_fmt(x_lo)}</text>',
        f'<text x="{right}" y="{bottom + 18}" text-anchor="end" font-family="sans-serif" font-size="11">{_fmt(x_hi)}</text>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">'
        f'{x_label}</text>',
        f'<text x="{MARGIN - 6}" y="{bottom}" text-anchor="end" font-family="sans-serif" font-size="11">{_fmt(y_lo)}</text>',
        f'<text x="{MARGIN - 6}" y="{MARGIN + 4}" text-anchor="end" font-family="sans-serif" font-size="11">'
        f'{_fmt(y_hi)}</text>',
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{poly}"/>',
        "</svg>",
    ]
    return "\n".join(lines) + "\n"


def emit_plots(metrics_csv, out_dir, columns=None, x="epoch"):
    """One SVG per numeric column against ``x``; returns the written paths."""
    header, data = read_numeric_csv(metrics_csv, x)
    # wall-clock time is left out by default so charts of repeated runs compare equal
    numeric = [c for c in header if c not in TEXT_COLUMNS and c not in (x, "wall_seconds")]
    if columns:
        for c in columns:
            if c not in header:
                raise FormatError(f"{metrics_csv}: missing column {c!r}")
            if c in TEXT_COLUMNS:
                raise FormatError(f"{metrics_csv}: column {c!r} is not numeric")
        numeric = [c for c in columns if c != x]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    xs = [row[x] for row in data]
    written = []
    for c in numeric:
        path = out_dir / f"{c}.svg"
        path.write_text(render_svg(c, xs, [row[c] for row in data], x))
        written.append(path)
    return written
