"""Static SVG rendering of logs and sweep results.

Hand-rolled renderer: standalone files, no external assets, and
byte-identical output for identical input. Layouts: stacked time-series
panels for a walk log, a polar polygon per method for direction sweeps,
and plain line charts for timing sweeps and ablation traces.
"""

from __future__ import annotations

import math

import numpy as np

_COLORS = ["#c0392b", "#27ae60", "#2980b9", "#2c3e50", "#8e44ad", "#d35400"]


def _fmt(x: float) -> str:
    return f"{x:.6g}"


class _Canvas:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]

    def line(self, x1, y1, x2, y2, color="#888", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{color}" stroke-width="{_fmt(width)}"{d}/>'
        )

    def path(self, points, color, width=1.5, close=False, fill="none", opacity=1.0):
        if len(points) == 0:
            return
        cmds = [f"M {_fmt(points[0][0])} {_fmt(points[0][1])}"]
        for x, y in points[1:]:
            cmds.append(f"L {_fmt(x)} {_fmt(y)}")
        if close:
            cmds.append("Z")
        self.parts.append(
            f'<path d="{" ".join(cmds)}" fill="{fill}" stroke="{color}" '
            f'stroke-width="{_fmt(width)}" opacity="{_fmt(opacity)}"/>'
        )

    def text(self, x, y, s, size=11, color="#222", anchor="start"):
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
            f'font-family="sans-serif" fill="{color}" text-anchor="{anchor}">{s}</text>'
        )

    def to_bytes(self) -> bytes:
        return ("\n".join(self.parts) + "\n</svg>\n").encode("utf-8")


class _Axes:
    """Maps data coordinates onto a pixel box with simple ticks."""

    def __init__(self, canvas, x0, y0, w, h, xlim, ylim, title="", xlabel="", ylabel=""):
        self.c = canvas
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        span_x = xlim[1] - xlim[0] or 1.0
        span_y = ylim[1] - ylim[0] or 1.0
        self.xlim = (xlim[0], xlim[0] + span_x)
        self.ylim = (ylim[0], ylim[0] + span_y)
        canvas.line(x0, y0 + h, x0 + w, y0 + h, "#333")
        canvas.line(x0, y0, x0, y0 + h, "#333")
        if title:
            canvas.text(x0 + w / 2, y0 - 6, title, size=12, anchor="middle")
        if xlabel:
            canvas.text(x0 + w / 2, y0 + h + 28, xlabel, anchor="middle")
        if ylabel:
            canvas.text(x0 - 48, y0 + h / 2, ylabel, size=10)
        for frac in (0.0, 0.5, 1.0):
            xv = self.xlim[0] + frac * span_x
            yv = self.ylim[0] + frac * span_y
            px, py = self.to_px(xv, self.ylim[0]), self.to_px(self.xlim[0], yv)
            canvas.text(px[0], y0 + h + 14, _fmt(xv), size=9, anchor="middle")
            canvas.text(x0 - 4, py[1] + 3, _fmt(yv), size=9, anchor="end")
        zero_y = self.to_px(self.xlim[0], 0.0)[1]
        if y0 <= zero_y <= y0 + h:
            canvas.line(x0, zero_y, x0 + w, zero_y, "#ccc", dash="3,3")

    def to_px(self, x, y):
        fx = (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0])
        fy = (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0])
        return self.x0 + fx * self.w, self.y0 + self.h - fy * self.h

    def plot(self, xs, ys, color, width=1.5, label=None, label_slot=0):
        pts = [self.to_px(x, y) for x, y in zip(xs, ys) if np.isfinite(x) and np.isfinite(y)]
        self.c.path(pts, color, width)
        if label:
            lx = self.x0 + self.w - 4
            ly = self.y0 + 12 + 13 * label_slot
            self.c.text(lx, ly, label, size=10, color=color, anchor="end")


def _limits(arrays, pad=0.08):
    vals = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays if len(a)])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return (0.0, 1.0)
    lo, hi = float(vals.min()), float(vals.max())
    span = (hi - lo) or 1.0
    return (lo - pad * span, hi + pad * span)


def render_walk_svg(log) -> bytes:
    """Stacked panels: DCM error, reference vs applied ZMP, committed phase
    duration, step targets. Panels with no finite data are omitted."""
    t = log.col("time")
    panels = []

    def add_panel(title, ylabel, series):
        series = [(lab, ys) for lab, ys in series
                  if len(ys) and np.any(np.isfinite(ys))]
        if series:
            panels.append((title, ylabel, series))

    add_panel("DCM error [m]", "m",
              [("x", log.col("dcm_err_x")), ("y", log.col("dcm_err_y"))])
    add_panel("ZMP x [m]", "m",
              [("ref", log.col("zmp_ref_x")), ("applied", log.col("zmp_des_x"))])
    add_panel("ZMP y [m]", "m",
              [("ref", log.col("zmp_ref_y")), ("applied", log.col("zmp_des_y"))])
    add_panel("committed phase duration [s]", "s", [("T", log.col("t_new"))])
    add_panel("swing target x [m]", "m", [("x", log.col("swing_target_x"))])

    panel_h, gap, margin = 120, 48, 60
    height = margin + len(panels) * (panel_h + gap)
    canvas = _Canvas(860, height)
    y = 30
    for title, ylabel, series in panels:
        ax = _Axes(canvas, margin, y, 740, panel_h,
                   _limits([t]) if len(t) else (0, 1),
                   _limits([ys for _, ys in series]),
                   title=title, xlabel="time [s]" if title == panels[-1][0] else "")
        for slot, (lab, ys) in enumerate(series):
            ax.plot(t, ys, _COLORS[slot % len(_COLORS)], label=lab, label_slot=slot)
        for ev in log.events:
            if ev["kind"] == "fall":
                px = ax.to_px(ev["time"], 0)[0]
                canvas.line(px, y, px, y + panel_h, "#c0392b", dash="4,2")
        y += panel_h + gap
    return canvas.to_bytes()


def render_polar_svg(directions_deg, series: dict[str, list[float]],
                     unit: str = "N·s") -> bytes:
    """Max-impulse polygon per method over push directions."""
    size = 520
    canvas = _Canvas(size, size)
    cx = cy = size / 2
    radius = size / 2 - 70
    finite = [v for vals in series.values() for v in vals if np.isfinite(v)]
    vmax = max(finite) if finite else 1.0
    vmax = vmax or 1.0
    for frac in (0.25, 0.5, 0.75, 1.0):
        ring = [
            (cx + frac * radius * math.cos(math.radians(a)),
             cy - frac * radius * math.sin(math.radians(a)))
            for a in range(0, 360, 5)
        ]
        canvas.path(ring, "#ddd", 0.8, close=True)
        canvas.text(cx + 4, cy - frac * radius - 2, _fmt(frac * vmax), size=8, color="#999")
    for a in directions_deg:
        x = cx + radius * math.cos(math.radians(a))
        y = cy - radius * math.sin(math.radians(a))
        canvas.line(cx, cy, x, y, "#eee")
        lx = cx + (radius + 16) * math.cos(math.radians(a))
        ly = cy - (radius + 16) * math.sin(math.radians(a))
        canvas.text(lx, ly + 3, f"{_fmt(a)}°", size=9, anchor="middle")
    for slot, (label, vals) in enumerate(series.items()):
        pts = []
        for a, v in zip(directions_deg, vals):
            if not np.isfinite(v):
                continue
            r = radius * v / vmax
            pts.append((cx + r * math.cos(math.radians(a)),
                        cy - r * math.sin(math.radians(a))))
        color = _COLORS[slot % len(_COLORS)]
        canvas.path(pts, color, 2.0, close=True)
        canvas.text(16, 20 + 14 * slot, f"{label} [{unit}]", size=11, color=color)
    return canvas.to_bytes()


def render_lines_svg(x_vals, series: dict[str, list[float]], title: str,
                     xlabel: str, ylabel: str) -> bytes:
    """One line per labeled series over a shared x grid."""
    canvas = _Canvas(720, 360)
    finite_series = {k: v for k, v in series.items()
                     if len(v) and np.any(np.isfinite(np.asarray(v, dtype=float)))}
    xl = _limits([x_vals]) if len(x_vals) else (0.0, 1.0)
    yl = _limits(list(finite_series.values())) if finite_series else (0.0, 1.0)
    ax = _Axes(canvas, 70, 40, 600, 260, xl, yl, title=title, xlabel=xlabel,
               ylabel=ylabel)
    for slot, (label, vals) in enumerate(finite_series.items()):
        ax.plot(x_vals, vals, _COLORS[slot % len(_COLORS)], label=label,
                label_slot=slot)
    return canvas.to_bytes()
