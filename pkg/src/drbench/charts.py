"""Line-chart SVG emission from summary rows.

One chart per scenario facet: sample size on a log axis, the chosen
metric on the y axis, one polyline per estimator. Output is plain SVG
text with no external assets, plus a tidy CSV of the plotted points.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass

__all__ = ["PlotSpec", "METRICS", "plot_summary"]

METRICS = ("bias", "rmse")

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 130, 40, 48

ESTIMATOR_COLORS = {
    "ipw": "#d55e00",
    "gcomp": "#0072b2",
    "aipw": "#009e73",
    "tmle": "#cc79a7",
}
FALLBACK_COLOR = "#555555"


@dataclass(frozen=True)
class PlotSpec:
    metric: str
    out_dir: str

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_-]+", "-", text).strip("-") or "facet"


def _x_position(n: int, lo: float, hi: float) -> float:
    span = hi - lo
    frac = 0.5 if span == 0 else (math.log10(n) - lo) / span
    return MARGIN_L + frac * (WIDTH - MARGIN_L - MARGIN_R)


def _y_position(v: float, lo: float, hi: float) -> float:
    frac = (v - lo) / (hi - lo)
    return HEIGHT - MARGIN_B - frac * (HEIGHT - MARGIN_T - MARGIN_B)


def _facet_svg(scenario: str, metric: str, series: dict) -> str:
    ns = sorted({n for pts in series.values() for n, _ in pts})
    values = [v for pts in series.values() for _, v in pts]
    x_lo, x_hi = math.log10(ns[0]), math.log10(ns[-1])
    v_lo, v_hi = min(values), max(values)
    if metric == "bias":
        v_lo, v_hi = min(v_lo, 0.0), max(v_hi, 0.0)
    pad = 0.05 * (v_hi - v_lo) or 1.0
    v_lo, v_hi = v_lo - pad, v_hi + pad

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{metric} by sample size '
        f'({scenario})</text>',
    ]
    axis_y = HEIGHT - MARGIN_B
    parts.append(f'<line x1="{MARGIN_L}" y1="{axis_y}" x2="{WIDTH - MARGIN_R}" '
                 f'y2="{axis_y}" stroke="black"/>')
    parts.append(f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
                 f'y2="{axis_y}" stroke="black"/>')

    for n in ns:
        px = _x_position(n, x_lo, x_hi)
        parts.append(f'<line x1="{px:.2f}" y1="{axis_y}" x2="{px:.2f}" '
                     f'y2="{axis_y + 5}" stroke="black"/>')
        parts.append(f'<text x="{px:.2f}" y="{axis_y + 20}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12">{n}</text>')
    for i in range(5):
        v = v_lo + i * (v_hi - v_lo) / 4
        py = _y_position(v, v_lo, v_hi)
        parts.append(f'<line x1="{MARGIN_L - 5}" y1="{py:.2f}" x2="{MARGIN_L}" '
                     f'y2="{py:.2f}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L - 9}" y="{py + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="12">{v:.3g}</text>')
    if metric == "bias" and v_lo < 0.0 < v_hi:
        py = _y_position(0.0, v_lo, v_hi)
        parts.append(f'<line x1="{MARGIN_L}" y1="{py:.2f}" x2="{WIDTH - MARGIN_R}" '
                     f'y2="{py:.2f}" stroke="#bbbbbb" stroke-dasharray="4 3"/>')

    legend_y = MARGIN_T + 8
    for estimator, pts in series.items():
        color = ESTIMATOR_COLORS.get(estimator, FALLBACK_COLOR)
        coords = " ".join(
            f"{_x_position(n, x_lo, x_hi):.2f},{_y_position(v, v_lo, v_hi):.2f}"
            for n, v in pts
        )
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        for n, v in pts:
            parts.append(f'<circle cx="{_x_position(n, x_lo, x_hi):.2f}" '
                         f'cy="{_y_position(v, v_lo, v_hi):.2f}" r="3" '
                         f'fill="{color}"/>')
        parts.append(f'<text x="{WIDTH - MARGIN_R + 12}" y="{legend_y}" '
                     f'font-family="sans-serif" font-size="13" '
                     f'fill="{color}">{estimator}</text>')
        legend_y += 18

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_summary(rows, metric: str, out_dir) -> list:
    """Write one SVG per scenario plus a tidy CSV of the plotted points.

    Returns the written paths, points file last.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    rows = list(rows)
    if not rows:
        raise ValueError("no summary rows to plot")
    os.makedirs(out_dir, exist_ok=True)

    facets: dict = {}
    for r in rows:
        series = facets.setdefault(r.scenario, {})
        series.setdefault(r.estimator, []).append((r.n, getattr(r, metric)))

    written = []
    points_path = os.path.join(out_dir, f"{metric}_points.csv")
    with open(points_path, "w") as fh:
        fh.write("scenario,covariates,fit_mode,n,estimator,metric,value\n")
        for r in rows:
            fh.write(f"{r.scenario},{r.covariates},{r.fit_mode},{r.n},"
                     f"{r.estimator},{metric},{getattr(r, metric):.17g}\n")

    for scenario, series in facets.items():
        for pts in series.values():
            pts.sort()
        path = os.path.join(out_dir, f"{metric}_{_slug(scenario)}.svg")
        with open(path, "w") as fh:
            fh.write(_facet_svg(scenario, metric, series))
        written.append(path)
    written.append(points_path)
    return written
