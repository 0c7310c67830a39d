"""CSV / JSON / SVG writers.

Floats are written with 17 significant digits so that files round-trip
exactly and repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EIGENVALUE_COLUMNS = ["index", "lambda", "residual", "group_id", "class", "gamma_trace_norm"]
DTN_COLUMNS = ["lambda", "mode", "smallest_eig", "interior_resonant"]
SIGMA_D_COLUMNS = ["lambda", "r", "r_k", "dim_N", "defect"]
SWEEP_COLUMNS = ["epsilon", "j", "lambda_eps", "lambda_limit", "raw_error", "scaled_error"]
QUASIMODE_COLUMNS = ["epsilon", "residual", "beta_theoretical"]


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (list, tuple)):
        return ";".join(format_value(x) for x in v)
    return "" if v is None else str(v)


def csv_text(records, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        writer.writerow([format_value(rec.get(c)) for c in columns])
    return buf.getvalue()


def _plain(obj):
    """JSON-ready copy: numpy scalars unwrapped, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def json_text(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


@dataclass
class Series:
    label: str
    x: list[float]
    y: list[float]
    slope: float | None = None
    constant: float | None = None


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b"]


def _decades(lo: float, hi: float) -> list[int]:
    return list(range(math.floor(math.log10(lo)), math.ceil(math.log10(hi)) + 1))


def loglog_svg(series: list[Series], title: str = "", xlabel: str = "epsilon",
               ylabel: str = "error", width: int = 560, height: int = 420) -> str:
    """Self-contained log-log scatter with optional fitted lines ``c * x**slope``."""
    pts = [(x, y) for s in series for x, y in zip(s.x, s.y) if x > 0 and y > 0]
    left, right, top, bottom = 80, 150, 40, 60
    pw, ph = width - left - right, height - top - bottom
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" '
                   f'font-size="14">{_esc(title)}</text>')
    if pts:
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        x0, x1 = math.log10(min(xs)), math.log10(max(xs))
        y0, y1 = math.log10(min(ys)), math.log10(max(ys))
        if x1 - x0 < 1e-12:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 - y0 < 1e-12:
            y0, y1 = y0 - 0.5, y1 + 0.5
        padx, pady = 0.05 * (x1 - x0), 0.08 * (y1 - y0)
        x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady

        def px(x):
            return left + (math.log10(x) - x0) / (x1 - x0) * pw

        def py(y):
            return top + ph - (math.log10(y) - y0) / (y1 - y0) * ph

        for d in _decades(10 ** x0, 10 ** x1):
            if x0 <= d <= x1:
                X = px(10.0 ** d)
                out.append(f'<line x1="{X:.2f}" y1="{top + ph}" x2="{X:.2f}" y2="{top + ph + 5}" '
                           f'stroke="black"/>')
                out.append(f'<text x="{X:.2f}" y="{top + ph + 18}" text-anchor="middle">'
                           f'1e{d}</text>')
        for d in _decades(10 ** y0, 10 ** y1):
            if y0 <= d <= y1:
                Y = py(10.0 ** d)
                out.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left}" y2="{Y:.2f}" '
                           f'stroke="black"/>')
                out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" text-anchor="end">1e{d}</text>')
        for i, s in enumerate(series):
            color = _COLORS[i % len(_COLORS)]
            good = [(x, y) for x, y in zip(s.x, s.y) if x > 0 and y > 0]
            for x, y in good:
                out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="4" fill="{color}"/>')
            if s.slope is not None and s.constant is not None and good:
                xa, xb = min(x for x, _ in good), max(x for x, _ in good)
                ya, yb = s.constant * xa ** s.slope, s.constant * xb ** s.slope
                if ya > 0 and yb > 0:
                    out.append(f'<line x1="{px(xa):.2f}" y1="{py(ya):.2f}" x2="{px(xb):.2f}" '
                               f'y2="{py(yb):.2f}" stroke="{color}" stroke-width="1.5"/>')
            label = s.label + ("" if s.slope is None else f" (slope {s.slope:.3f})")
            ly = top + 16 + 18 * i
            out.append(f'<circle cx="{left + pw + 16}" cy="{ly - 4}" r="4" fill="{color}"/>')
            out.append(f'<text x="{left + pw + 26}" y="{ly}">{_esc(label)}</text>')
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
               f'stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 15}" text-anchor="middle">'
               f'{_esc(xlabel)}</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2:.1f})">{_esc(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_report(results, fmt: str, path, columns=None, **svg_options) -> Path:
    """Write ``results`` as csv (records + columns), json (any object) or svg (Series list)."""
    path = Path(path)
    if fmt == "csv":
        if columns is None:
            columns = list(results[0].keys()) if results else []
        text = csv_text(results, columns)
    elif fmt == "json":
        text = json_text(results)
    elif fmt == "svg":
        text = loglog_svg(list(results), **svg_options)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
