"""Deterministic SVG figures of one instance: map, ground truth and predicted modes."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .evaluation import Prediction
from .scene import Instance, SceneMap

DRIVABLE_FILL = "#e6e6e6"
NON_DRIVABLE_FILL = "#3a3a3a"
BACKGROUND = "#9a9a9a"
GT_COLOR = "#00a000"
MODE_COLOR = "#d00000"
HISTORY_COLOR = "#202080"


def mode_opacity(p: float, p_max: float) -> float:
    """0.25 + 0.75 * p / p_max, so the most probable mode is fully opaque."""
    if p_max <= 0:
        return 0.25
    return 0.25 + 0.75 * (p / p_max)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(
    instance: Instance,
    prediction: Prediction,
    scene_map: SceneMap | None = None,
    margin: float = 15.0,
    px_per_m: float = 4.0,
) -> str:
    """SVG markup with one ``class="mode"`` polyline per predicted mode and one ``class="gt"`` polyline."""
    scene_map = scene_map if scene_map is not None else instance.map
    hist = np.array([[s.x, s.y] for s in instance.history])
    gt = np.vstack([hist[-1:], instance.future])
    pts = np.vstack([hist, gt, prediction.modes.reshape(-1, 2)])
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    width = (hi[0] - lo[0]) * px_per_m
    height = (hi[1] - lo[1]) * px_per_m

    def xy(p):
        return (p[0] - lo[0]) * px_per_m, (hi[1] - p[1]) * px_per_m

    def points(arr):
        return " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in map(xy, arr))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        f'<title>{escape(instance.id)} ({escape(prediction.source)})</title>',
        f'<rect x="0" y="0" width="{_fmt(width)}" height="{_fmt(height)}" fill="{BACKGROUND}"/>',
    ]
    for poly in scene_map.drivable:
        out.append(f'<polygon class="drivable" points="{points(poly)}" fill="{DRIVABLE_FILL}" stroke="none"/>')
    for poly in scene_map.non_drivable:
        out.append(f'<polygon class="non-drivable" points="{points(poly)}" fill="{NON_DRIVABLE_FILL}" stroke="none"/>')

    out.append(
        f'<polyline class="history" points="{points(hist)}" fill="none" stroke="{HISTORY_COLOR}" '
        f'stroke-width="2" stroke-linecap="round"/>'
    )
    p_max = float(prediction.probs.max())
    start = hist[-1:]
    # least probable first so the strongest mode is drawn on top
    for m in sorted(range(prediction.n_modes), key=lambda i: (prediction.probs[i], -i)):
        mode = np.vstack([start, prediction.modes[m]])
        infeasible = bool(prediction.infeasible[m]) if prediction.infeasible else False
        dash = ' stroke-dasharray="6 4"' if infeasible else ""
        out.append(
            f'<polyline class="mode" data-mode="{m}" data-prob="{prediction.probs[m]:.4f}" points="{points(mode)}" '
            f'fill="none" stroke="{MODE_COLOR}" stroke-opacity="{mode_opacity(prediction.probs[m], p_max):.3f}" '
            f'stroke-width="2.5"{dash}/>'
        )
    out.append(
        f'<polyline class="gt" points="{points(gt)}" fill="none" stroke="{GT_COLOR}" stroke-width="2.5"/>'
    )
    best = int(np.argmax(prediction.probs))
    lx, ly = xy(prediction.modes[best][-1])
    out.append(
        f'<text class="prob-label" x="{_fmt(lx + 4)}" y="{_fmt(ly - 4)}" font-family="sans-serif" '
        f'font-size="14" fill="{MODE_COLOR}">{prediction.probs[best]:.2f}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(instance: Instance, prediction: Prediction, path, scene_map: SceneMap | None = None) -> Path:
    path = Path(path)
    path.write_text(render_svg(instance, prediction, scene_map))
    return path
