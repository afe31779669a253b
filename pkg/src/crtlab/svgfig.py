"""Minimal static SVG figures: polyline charts, bands, and heatmaps.

No plotting dependency; figures are assembled from a handful of shape
primitives in data coordinates. Every figure embeds a JSON payload in a
<metadata> element so tests can assert on the plotted numbers instead of
comparing pixels.
"""

from __future__ import annotations

import json
from xml.sax.saxutils import escape

import numpy as np

FONT = "font-family='Helvetica, Arial, sans-serif'"


class SvgCanvas:
    """Fixed-size canvas with one data-coordinate viewport."""

    def __init__(self, width: int = 760, height: int = 520):
        self.width = width
        self.height = height
        self.margin = {"left": 70, "right": 24, "top": 40, "bottom": 56}
        self._parts: list[str] = []
        self._meta: dict | None = None
        self._view = (0.0, 1.0, 0.0, 1.0)

    # ----------- Coordinates -----------

    def set_view(self, xmin: float, xmax: float, ymin: float, ymax: float) -> None:
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("degenerate view box")
        self._view = (xmin, xmax, ymin, ymax)

    def px(self, x: float) -> float:
        xmin, xmax, _, _ = self._view
        w = self.width - self.margin["left"] - self.margin["right"]
        return self.margin["left"] + (x - xmin) / (xmax - xmin) * w

    def py(self, y: float) -> float:
        _, _, ymin, ymax = self._view
        h = self.height - self.margin["top"] - self.margin["bottom"]
        return self.height - self.margin["bottom"] - (y - ymin) / (ymax - ymin) * h

    # ----------- Primitives (data coordinates unless noted) -----------

    def polyline(self, xs, ys, color: str, width: float = 2.0, dash: str = "") -> None:
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys))
        extra = f" stroke-dasharray='{dash}'" if dash else ""
        self._parts.append(
            f"<polyline points='{pts}' fill='none' stroke='{color}' "
            f"stroke-width='{width}'{extra}/>"
        )

    def polygon(self, xs, ys, fill: str, opacity: float = 1.0) -> None:
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys))
        self._parts.append(f"<polygon points='{pts}' fill='{fill}' opacity='{opacity:g}'/>")

    def rect_data(self, x0, x1, y0, y1, fill: str) -> None:
        xa, xb = self.px(x0), self.px(x1)
        ya, yb = self.py(y1), self.py(y0)
        self._parts.append(
            f"<rect x='{xa:.2f}' y='{ya:.2f}' width='{xb - xa:.2f}' "
            f"height='{yb - ya:.2f}' fill='{fill}'/>"
        )

    def circle(self, x: float, y: float, r: float, color: str) -> None:
        self._parts.append(
            f"<circle cx='{self.px(x):.2f}' cy='{self.py(y):.2f}' r='{r:g}' fill='{color}'/>"
        )

    def text_px(self, xpx: float, ypx: float, s: str, size: int = 13, anchor: str = "middle",
                color: str = "#222") -> None:
        self._parts.append(
            f"<text x='{xpx:.2f}' y='{ypx:.2f}' {FONT} font-size='{size}' "
            f"text-anchor='{anchor}' fill='{color}'>{escape(s)}</text>"
        )

    # ----------- Composites -----------

    def axes(self, xlabel: str, ylabel: str, xticks, yticks, title: str = "") -> None:
        xmin, xmax, ymin, ymax = self._view
        x0, x1 = self.px(xmin), self.px(xmax)
        y0, y1 = self.py(ymin), self.py(ymax)
        self._parts.append(
            f"<line x1='{x0:.2f}' y1='{y0:.2f}' x2='{x1:.2f}' y2='{y0:.2f}' "
            "stroke='#444' stroke-width='1'/>"
        )
        self._parts.append(
            f"<line x1='{x0:.2f}' y1='{y0:.2f}' x2='{x0:.2f}' y2='{y1:.2f}' "
            "stroke='#444' stroke-width='1'/>"
        )
        for t in xticks:
            xp = self.px(t)
            self._parts.append(
                f"<line x1='{xp:.2f}' y1='{y0:.2f}' x2='{xp:.2f}' y2='{y0 + 5:.2f}' "
                "stroke='#444' stroke-width='1'/>"
            )
            self.text_px(xp, y0 + 20, f"{t:g}", size=12)
        for t in yticks:
            yp = self.py(t)
            self._parts.append(
                f"<line x1='{x0 - 5:.2f}' y1='{yp:.2f}' x2='{x0:.2f}' y2='{yp:.2f}' "
                "stroke='#444' stroke-width='1'/>"
            )
            self.text_px(x0 - 9, yp + 4, f"{t:g}", size=12, anchor="end")
        self.text_px((x0 + x1) / 2, self.height - 14, xlabel, size=14)
        self._parts.append(
            f"<text x='18' y='{(y0 + y1) / 2:.2f}' {FONT} font-size='14' fill='#222' "
            f"text-anchor='middle' transform='rotate(-90 18 {(y0 + y1) / 2:.2f})'>"
            f"{escape(ylabel)}</text>"
        )
        if title:
            self.text_px((x0 + x1) / 2, 24, title, size=16)

    def legend(self, entries: list[tuple[str, str]]) -> None:
        """Entries are (label, color); drawn top-right inside the plot area."""
        x = self.width - self.margin["right"] - 170
        y = self.margin["top"] + 10
        for i, (label, color) in enumerate(entries):
            yy = y + 20 * i
            self._parts.append(
                f"<line x1='{x}' y1='{yy}' x2='{x + 26}' y2='{yy}' "
                f"stroke='{color}' stroke-width='3'/>"
            )
            self.text_px(x + 34, yy + 4, label, size=12, anchor="start")

    def set_metadata(self, payload: dict) -> None:
        self._meta = payload

    # ----------- Output -----------

    def to_string(self) -> str:
        head = (
            f"<svg xmlns='http://www.w3.org/2000/svg' width='{self.width}' "
            f"height='{self.height}' viewBox='0 0 {self.width} {self.height}'>"
        )
        meta = ""
        if self._meta is not None:
            blob = escape(json.dumps(self._meta, sort_keys=True))
            meta = f"<metadata id='figdata'>{blob}</metadata>"
        bg = f"<rect width='{self.width}' height='{self.height}' fill='white'/>"
        return head + meta + bg + "".join(self._parts) + "</svg>"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_string())


def read_metadata(path) -> dict:
    """Recover the JSON payload embedded by set_metadata."""
    import xml.etree.ElementTree as ET

    root = ET.parse(path).getroot()
    node = root.find("{http://www.w3.org/2000/svg}metadata")
    if node is None or node.text is None:
        raise ValueError(f"no metadata element in {path}")
    return json.loads(node.text)


def nice_ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    """Round tick positions inside [lo, hi]."""
    if not (hi > lo):
        return [lo]
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = np.ceil(lo / step) * step
    ticks = np.arange(start, hi + step * 0.501, step)
    return [float(t) for t in ticks if lo - 1e-12 <= t <= hi + 1e-12]
