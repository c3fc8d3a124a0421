"""Deterministic SVG line charts of CSV log columns against time."""

from __future__ import annotations

import fnmatch
import math
from pathlib import Path

import numpy as np

from .controller import read_log

WIDTH, HEIGHT = 800, 480
MARGIN = (70, 20, 30, 50)  # left, right, top, bottom
COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


class UnknownColumn(KeyError):
    pass


def select_columns(header, patterns):
    pats = [p for p in patterns if p]
    if not pats:
        raise UnknownColumn("no columns selected")
    out = []
    for p in pats:
        hit = [h for h in header if fnmatch.fnmatchcase(h, p) and h not in ("tick", "time_s")]
        if not hit:
            raise UnknownColumn(p)
        out += [h for h in hit if h not in out]
    return out


def padded_bounds(lo, hi):
    span = hi - lo
    if span <= 0:
        span = max(abs(lo), 1.0)
    return lo - 0.05 * span, hi + 0.05 * span


def _fmt(x):
    return f"{x:.2f}"


def _tick_label(x):
    return f"{x:.4g}"


def render_svg(t, series, title=""):
    """``series`` is a list of ``(name, values)``; NaN splits a line."""
    vals = np.concatenate([v[np.isfinite(v)] for _, v in series]) if series else np.zeros(0)
    if vals.size == 0:
        vals = np.zeros(1)
    y0, y1 = padded_bounds(float(vals.min()), float(vals.max()))
    tt = t[np.isfinite(t)]
    x0, x1 = (float(tt.min()), float(tt.max())) if tt.size else (0.0, 1.0)
    x0, x1 = padded_bounds(x0, x1)
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - y) / (y1 - y0) * ph

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'data-xmin="{x0!r}" data-xmax="{x1!r}" data-ymin="{y0!r}" data-ymax="{y1!r}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        lines.append(f'<text x="{left}" y="{top - 6}" font-size="12">{_escape(title)}</text>')
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        lines.append(f'<text x="{_fmt(px(xv))}" y="{HEIGHT - bottom + 16}" font-size="10" text-anchor="middle">{_tick_label(xv)}</text>')
        lines.append(f'<text x="{left - 4}" y="{_fmt(py(yv) + 3)}" font-size="10" text-anchor="end">{_tick_label(yv)}</text>')
    lines.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 8}" font-size="11" text-anchor="middle">time [s]</text>')
    for i, (name, v) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        seg = []
        segments = []
        for x, y in zip(t, v):
            if math.isfinite(x) and math.isfinite(y):
                seg.append(f"{_fmt(px(x))},{_fmt(py(y))}")
            elif seg:
                segments.append(seg)
                seg = []
        if seg:
            segments.append(seg)
        for s in segments:
            lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" data-column="{_escape(name)}" points="{" ".join(s)}"/>')
        lines.append(f'<text x="{WIDTH - right - 4}" y="{top + 14 + 12 * i}" font-size="10" text-anchor="end" fill="{color}">{_escape(name)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _escape(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def plot(log_path, columns, out_path, title=None):
    header, cols = read_log(log_path)
    names = select_columns(header, columns)
    series = [(n, cols[n]) for n in names if n not in ("state", "solver_status")]
    if not series:
        raise UnknownColumn("only non-numeric columns selected")
    svg = render_svg(cols["time_s"], series, title if title is not None else Path(log_path).name)
    Path(out_path).write_text(svg)
    return Path(out_path)
