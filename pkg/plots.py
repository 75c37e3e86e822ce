"""
Static SVG scatter projections of events before and after translation.

Each figure is one 2-D projection (x-z or y-z). Rows are events, the left column
is the input event and the right column its translation; every panel of a
projection shares the same axis limits so the columns can be compared directly.
"""
from html import escape

import numpy as np

PANEL_SIZE = 240
MARGIN = 28
POINT_RADIUS = 1.4
COLORS = {'before': '#1f77b4', 'after': '#d62728'}
AXIS_NAMES = ('x', 'y', 'z')
PROJECTIONS = {'xz': (0, 2), 'yz': (1, 2)}

SVG_TEMPLATE = """<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="__WIDTH__" height="__HEIGHT__" viewBox="0 0 __WIDTH__ __HEIGHT__">
<!-- __PROVENANCE__ -->
<style>
  text { font: 11px sans-serif; fill: #333; }
  .frame { fill: #fafafa; stroke: #999; stroke-width: 0.8; }
  .before circle { fill: __BEFORE__; }
  .after circle { fill: __AFTER__; }
</style>
<rect width="100%" height="100%" fill="white"/>
__TITLE__
__PANELS__
</svg>
"""


def _limits(clouds, axes):
    points = np.concatenate([c.points[:, axes] for c in clouds]).astype(np.float64)
    lower, upper = points.min(axis=0), points.max(axis=0)
    center = (lower + upper) / 2
    half = max(float((upper - lower).max()) / 2, 1e-6) * 1.05
    return center - half, center + half


def _panel(cloud, axes, lower, upper, x0, y0, css_class, caption):
    inner = PANEL_SIZE - 2 * 6
    p = cloud.points[:, axes].astype(np.float64)
    u = 6 + (p - lower) / (upper - lower) * inner
    circles = "".join(
        f'<circle cx="{x0 + a:.2f}" cy="{y0 + PANEL_SIZE - b:.2f}" r="{POINT_RADIUS}"/>'
        for a, b in u)
    return (f'<rect class="frame" x="{x0}" y="{y0}" width="{PANEL_SIZE}" height="{PANEL_SIZE}"/>'
            f'<g class="{css_class}">{circles}</g>'
            f'<text x="{x0 + 4}" y="{y0 - 6}">{escape(caption)}</text>')


def projection_svg(before, after, projection='xz', title="", provenance=None):
    """One SVG of event pairs (before[i], after[i]) projected onto the given plane."""
    if len(before) != len(after):
        raise ValueError(f"need matching event lists, got {len(before)} and {len(after)}")
    if not len(before):
        raise ValueError("nothing to plot")
    if projection not in PROJECTIONS:
        raise ValueError(f"projection must be one of {sorted(PROJECTIONS)}, got {projection!r}")
    axes = list(PROJECTIONS[projection])
    lower, upper = _limits(list(before) + list(after), axes)

    panels = []
    for row, (b, a) in enumerate(zip(before, after)):
        y0 = MARGIN * 2 + row * (PANEL_SIZE + MARGIN)
        panels.append(_panel(b, axes, lower, upper, MARGIN, y0, 'before', f"event {row}: input"))
        panels.append(_panel(a, axes, lower, upper, 2 * MARGIN + PANEL_SIZE, y0, 'after',
                             f"event {row}: translated"))

    width = 3 * MARGIN + 2 * PANEL_SIZE
    height = MARGIN * 2 + len(before) * (PANEL_SIZE + MARGIN)
    axis_label = f"{AXIS_NAMES[axes[0]]} (horizontal) vs {AXIS_NAMES[axes[1]]} (vertical)"
    heading = f'<text x="{MARGIN}" y="{MARGIN}">{escape(title)} {axis_label}</text>'
    stamp = " ".join(f"{k}={v}" for k, v in sorted((provenance or {}).items()))
    return (SVG_TEMPLATE
            .replace('__WIDTH__', str(width))
            .replace('__HEIGHT__', str(height))
            .replace('__PROVENANCE__', escape(stamp).replace('--', '- -'))
            .replace('__BEFORE__', COLORS['before'])
            .replace('__AFTER__', COLORS['after'])
            .replace('__TITLE__', heading)
            .replace('__PANELS__', "\n".join(panels)))


def write_projections(out_dir, before, after, title="", provenance=None):
    """Writes projection_xz.svg and projection_yz.svg; returns their paths."""
    paths = []
    for name in PROJECTIONS:
        path = out_dir / f"projection_{name}.svg"
        with open(path, 'w', encoding='utf-8') as f:
            f.write(projection_svg(before, after, name, title, provenance))
        paths.append(path)
    return paths
