"""Static SVG figures written directly (no plotting dependency)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .records import atomic_write_text

PALETTE = ("#3A86FF", "#FF006E", "#FB5607", "#8338EC", "#2A9D8F", "#FFBE0B", "#6C757D")


@dataclass(frozen=True)
class Viewport:
    """Maps data coordinates into one plot rectangle (y grows upwards in data space)."""

    left: float
    top: float
    width: float
    height: float
    x_range: Tuple[float, float]
    y_range: Tuple[float, float]

    def x(self, value: float) -> float:
        lo, hi = self.x_range
        return self.left + (value - lo) / (hi - lo) * self.width

    def y(self, value: float) -> float:
        lo, hi = self.y_range
        return self.top + self.height - (value - lo) / (hi - lo) * self.height


def _padded_range(values: np.ndarray, pad: float = 0.08) -> Tuple[float, float]:
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return (0.0, 1.0)
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return (lo - pad * span, hi + pad * span)


class SvgCanvas:
    def __init__(self, width: int, height: int) -> None:
        self.width = width
        self.height = height
        self._parts: List[str] = []

    def rect(self, x: float, y: float, w: float, h: float, fill: str, extra: str = "") -> None:
        self._parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" fill="{fill}" {extra}/>')

    def line(self, x1: float, y1: float, x2: float, y2: float, stroke: str = "#111", width: float = 1.0) -> None:
        self._parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="{stroke}" stroke-width="{width}"/>'
        )

    def polyline(self, points: Iterable[Tuple[float, float]], stroke: str, width: float = 1.5, opacity: float = 1.0) -> None:
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        self._parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="{width}" stroke-opacity="{opacity}"/>'
        )

    def circle(self, x: float, y: float, r: float, fill: str, opacity: float = 1.0, stroke: Optional[str] = None) -> None:
        outline = f' stroke="{stroke}"' if stroke else ""
        self._parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.2f}" fill="{fill}" fill-opacity="{opacity}"{outline}/>'
        )

    def text(self, x: float, y: float, content: str, size: int = 12, anchor: str = "start", extra: str = "") -> None:
        self._parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" text-anchor={quoteattr(anchor)} {extra}>{escape(content)}</text>'
        )

    def axes(self, view: Viewport, x_label: str, y_label: str) -> None:
        bottom = view.top + view.height
        self.line(view.left, view.top, view.left, bottom, width=1.5)
        self.line(view.left, bottom, view.left + view.width, bottom, width=1.5)
        for value in np.linspace(*view.x_range, 5):
            self.text(view.x(value), bottom + 16, f"{value:.2f}", size=10, anchor="middle")
        for value in np.linspace(*view.y_range, 5):
            self.text(view.left - 6, view.y(value) + 4, f"{value:.2f}", size=10, anchor="end")
        self.text(view.left + view.width / 2, bottom + 34, x_label, size=12, anchor="middle")
        self.text(
            0,
            0,
            y_label,
            size=12,
            anchor="middle",
            extra=f'transform="translate({view.left - 44:.2f},{view.top + view.height / 2:.2f}) rotate(-90)"',
        )

    def legend(self, left: float, top: float, labels: Sequence[str]) -> None:
        for index, label in enumerate(labels):
            y = top + 16 * index
            self.rect(left, y - 9, 10, 10, PALETTE[index % len(PALETTE)])
            self.text(left + 14, y, label, size=11)

    def render(self, title: str = "") -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">'
        )
        body = [f'<rect width="100%" height="100%" fill="#F8F9FB"/>']
        if title:
            body.append(
                f'<text x="{self.width / 2:.2f}" y="26" font-size="16" text-anchor="middle">{escape(title)}</text>'
            )
        return "\n".join([head, *body, *self._parts, "</svg>"]) + "\n"

    def save(self, path: Path, title: str = "") -> Path:
        atomic_write_text(path, self.render(title))
        return path


def _frame_marker(canvas: SvgCanvas, view: Viewport, x: float, y: float, yaw: float, label: str, scale: float) -> None:
    canvas.line(view.x(x), view.y(y), view.x(x + scale * np.cos(yaw)), view.y(y + scale * np.sin(yaw)), "#D00000", 2.0)
    canvas.line(view.x(x), view.y(y), view.x(x - scale * np.sin(yaw)), view.y(y + scale * np.cos(yaw)), "#008000", 2.0)
    canvas.text(view.x(x) + 4, view.y(y) - 4, label, size=10)


def trajectory_plot(
    path: Path,
    title: str,
    trajectories: Mapping[str, Sequence[np.ndarray]],
    frames: Sequence[Tuple[float, float, float, str]] = (),
) -> Path:
    """Top-down (x, y) view of composed trajectories per method with frame axes drawn."""
    canvas = SvgCanvas(720, 560)
    points = [np.asarray(t)[:, :2] for group in trajectories.values() for t in group]
    xy = np.concatenate(points + [np.array([[f[0], f[1]] for f in frames]).reshape(-1, 2)])
    x_range, y_range = _padded_range(xy[:, 0]), _padded_range(xy[:, 1])
    view = Viewport(90, 50, 440, 440, x_range, y_range)
    canvas.axes(view, "x", "y")
    for index, (label, group) in enumerate(trajectories.items()):
        color = PALETTE[index % len(PALETTE)]
        for trajectory in group:
            xy = np.asarray(trajectory)[:, :2]
            canvas.polyline([(view.x(a), view.y(b)) for a, b in xy], color, opacity=0.7)
            canvas.circle(view.x(xy[-1, 0]), view.y(xy[-1, 1]), 3, color)
    scale = 0.06 * (x_range[1] - x_range[0])
    for x, y, yaw, label in frames:
        _frame_marker(canvas, view, x, y, yaw, label, scale)
    canvas.legend(550, 70, list(trajectories))
    return canvas.save(path, title)


def weight_progress_plot(path: Path, title: str, series: Mapping[str, Tuple[np.ndarray, np.ndarray]]) -> Path:
    """Stream-1 weight against predicted progress; one curve per label."""
    canvas = SvgCanvas(720, 460)
    view = Viewport(90, 50, 440, 340, (0.0, 1.0), (0.0, 1.0))
    canvas.axes(view, "progress", "weight of stream 1")
    for index, (label, (progress, weight)) in enumerate(series.items()):
        order = np.argsort(progress, kind="stable")
        coords = [(view.x(float(p)), view.y(float(w))) for p, w in zip(np.asarray(progress)[order], np.asarray(weight)[order])]
        if coords:
            canvas.polyline(coords, PALETTE[index % len(PALETTE)], width=2.0)
    canvas.legend(550, 70, list(series))
    return canvas.save(path, title)


def scatter_panels(
    path: Path,
    title: str,
    panels: Sequence[Tuple[str, np.ndarray]],
    highlight: Optional[Tuple[float, float, float]] = None,
) -> Path:
    """Side-by-side 2D sample scatters sharing one range; ``highlight`` is (x, y, radius)."""
    count = max(1, len(panels))
    size = 300
    canvas = SvgCanvas(80 + count * (size + 70), size + 120)
    stacked = np.concatenate([np.atleast_2d(p) for _, p in panels]) if panels else np.zeros((1, 2))
    x_range, y_range = _padded_range(stacked[:, 0]), _padded_range(stacked[:, 1])
    for index, (label, points) in enumerate(panels):
        view = Viewport(70 + index * (size + 70), 50, size, size, x_range, y_range)
        canvas.axes(view, label, "y" if index == 0 else "")
        if highlight is not None:
            x, y, radius = highlight
            r = radius / (x_range[1] - x_range[0]) * size
            canvas.circle(view.x(x), view.y(y), r, "none", stroke="#111")
        for a, b in np.atleast_2d(points):
            canvas.circle(view.x(a), view.y(b), 1.8, PALETTE[index % len(PALETTE)], opacity=0.5)
    return canvas.save(path, title)


def success_bar_plot(path: Path, title: str, data: Sequence[Tuple[str, float]]) -> Path:
    canvas = SvgCanvas(max(480, 90 + 70 * len(data)), 440)
    view = Viewport(80, 50, canvas.width - 120, 300, (0.0, max(1.0, float(len(data)))), (0.0, 1.0))
    canvas.axes(view, "", "success rate")
    slot = view.width / max(1, len(data))
    for index, (label, value) in enumerate(data):
        height = max(0.0, min(1.0, value)) * view.height
        x = view.left + index * slot + 0.2 * slot
        canvas.rect(x, view.top + view.height - height, 0.6 * slot, height, PALETTE[index % len(PALETTE)])
        canvas.text(x + 0.3 * slot, view.top + view.height + 34, label, size=10, anchor="middle")
        canvas.text(x + 0.3 * slot, view.top + view.height - height - 4, f"{value:.2f}", size=10, anchor="middle")
    return canvas.save(path, title)
