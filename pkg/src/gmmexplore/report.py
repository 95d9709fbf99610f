"""Metrics CSV reading, per-mode aggregation, and plain SVG line charts."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from xml.sax.saxutils import escape

import numpy as np

from .simulator import CSV_HEADER

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def read_metrics(path) -> dict:
    """Columns of a metrics CSV as arrays (``mode`` as a list of strings)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected metrics header")
    body = rows[1:]
    if any(len(r) != len(CSV_HEADER) for r in body):
        raise ValueError(f"{path}: ragged metrics rows")
    cols = list(zip(*body)) if body else [()] * len(CSV_HEADER)
    out = {}
    for name, col in zip(CSV_HEADER, cols):
        if name == "mode":
            out[name] = list(col)
        elif name in ("bytes_cum", "seed"):
            out[name] = np.array([int(v) for v in col], dtype=np.int64)
        else:
            out[name] = np.array([float(v) for v in col])
    return out


def mean_curves(tables: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean entropy and bytes over trials, on the time grid of the shortest trial."""
    n = min(len(t["t_sec"]) for t in tables)
    t = tables[0]["t_sec"][:n]
    h = np.mean([tb["entropy_bits"][:n] for tb in tables], axis=0)
    b = np.mean([tb["bytes_cum"][:n].astype(float) for tb in tables], axis=0)
    return t, h, b


def summarize(tables: list) -> list[dict]:
    """One row per mode: trial count, mean final entropy and bytes, and the OG/MCG byte ratio."""
    by_mode = defaultdict(list)
    for tb in tables:
        if len(tb["mode"]):
            by_mode[tb["mode"][0]].append(tb)
    rows = []
    for mode in sorted(by_mode):
        ts = by_mode[mode]
        rows.append({
            "mode": mode,
            "trials": len(ts),
            "mean_final_entropy_bits": float(np.mean([t["entropy_bits"][-1] for t in ts])),
            "mean_bytes": float(np.mean([t["bytes_cum"][-1] for t in ts])),
        })
    means = {r["mode"]: r["mean_bytes"] for r in rows}
    ratio = means["og"] / means["mcg"] if means.get("mcg") and "og" in means else math.nan
    for r in rows:
        r["og_over_mcg_bytes"] = ratio
    return rows


def _nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    return np.arange(math.floor(lo / step) * step, hi + 0.5 * step, step)


def _fmt(v: float) -> str:
    a = abs(v)
    if a >= 1e6:
        return f"{v / 1e6:g}M"
    if a >= 1e3:
        return f"{v / 1e3:g}k"
    return f"{v:g}"


def line_chart_svg(series, title: str, xlabel: str, ylabel: str, width: int = 640, height: int = 400,
                   log_y: bool = False) -> str:
    """``series`` is a list of (label, xs, ys)."""
    ml, mr, mt, mb = 70, 130, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs_all = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys_all = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.zeros(1)
    ty = (lambda v: np.log10(np.maximum(v, 1.0))) if log_y else (lambda v: np.asarray(v, float))
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    yv = ty(ys_all)
    y0, y1 = float(yv.min()), float(yv.max())
    xt = _nice_ticks(x0, x1)
    yt = np.arange(math.floor(y0), math.ceil(y1) + 1) if log_y else _nice_ticks(y0, y1)
    x0, x1 = min(x0, xt[0]), max(x1, xt[-1])
    y0, y1 = min(y0, yt[0]), max(y1, yt[-1])
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(v):
        return ml + (np.asarray(v, float) - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (ty(v) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml + pw / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in xt:
        x = ml + (v - x0) / (x1 - x0) * pw
        out.append(f'<line x1="{x:.1f}" y1="{mt + ph}" x2="{x:.1f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 18}" text-anchor="middle">{_fmt(v)}</text>')
    for v in yt:
        y = mt + ph - (v - y0) / (y1 - y0) * ph
        lab = _fmt(10 ** v) if log_y else _fmt(v)
        out.append(f'<line x1="{ml - 5}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{ml + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text transform="translate(16,{mt + ph / 2}) rotate(-90)" text-anchor="middle">'
               f'{escape(ylabel)}</text>')
    for i, (label, xs, ys) in enumerate(series):
        c = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(px(xs), py(ys)))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        ly = mt + 16 * i + 8
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{c}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def comparison_charts(tables: list) -> dict[str, str]:
    """Mean entropy and cumulative-bytes charts, one curve per mode."""
    by_mode = defaultdict(list)
    for tb in tables:
        if len(tb["mode"]):
            by_mode[tb["mode"][0]].append(tb)
    ent, byt = [], []
    for mode in sorted(by_mode):
        t, h, b = mean_curves(by_mode[mode])
        label = f"{mode.upper()} (n={len(by_mode[mode])})"
        ent.append((label, t, h))
        byt.append((label, t, b))
    return {
        "entropy.svg": line_chart_svg(ent, "Referee map entropy", "time [s]", "entropy [bits]"),
        "bytes.svg": line_chart_svg(byt, "Cumulative data transferred", "time [s]", "bytes", log_y=True),
    }
