"""SVG charts: scenario fan chart and risk/return curves."""

import logging
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.db.models import ScenarioSet

logger = logging.getLogger(__name__)

WIDTH = 640
PANEL_HEIGHT = 220
MARGIN = 40
MAX_PATHS = 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _svg(height: int) -> ET.Element:
    return ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(WIDTH),
        height=str(height),
        viewBox=f"0 0 {WIDTH} {height}",
    )


class _Frame:
    """Maps data coordinates into a rectangle of the canvas."""

    def __init__(self, top: float, height: float, x_range: Tuple[float, float], y_range: Tuple[float, float]):
        self.top = top
        self.height = height
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            pad = max(abs(self.y0) * 0.01, 1e-9)
            self.y0, self.y1 = self.y0 - pad, self.y1 + pad

    def points(self, xs: np.ndarray, ys: np.ndarray) -> str:
        width = WIDTH - 2 * MARGIN
        px = MARGIN + (np.asarray(xs) - self.x0) / (self.x1 - self.x0) * width
        py = self.top + self.height - (np.asarray(ys) - self.y0) / (self.y1 - self.y0) * self.height
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))

    def axes(self, parent: ET.Element, title: str) -> None:
        ET.SubElement(
            parent,
            "rect",
            x=str(MARGIN),
            y=f"{self.top:.2f}",
            width=str(WIDTH - 2 * MARGIN),
            height=f"{self.height:.2f}",
            fill="none",
            stroke="#999999",
        )
        label = ET.SubElement(parent, "text", x=str(MARGIN), y=f"{self.top - 6:.2f}", fill="#333333")
        label.set("font-size", "12")
        label.text = title


def _polyline(parent: ET.Element, points: str, color: str, width: float = 1.0, opacity: float = 1.0) -> None:
    ET.SubElement(
        parent,
        "polyline",
        points=points,
        fill="none",
        stroke=color,
        opacity=f"{opacity:.2f}",
    ).set("stroke-width", f"{width:.1f}")


def write_svg(root: ET.Element, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)
    logger.info(f"Chart written to {path}")
    return path


def fan_chart(scenarios: ScenarioSet, history: Optional[np.ndarray] = None) -> ET.Element:
    """
    One panel per asset: past prices, a sample of scenario paths and the
    5/50/95 percentile band of the scenarios.
    """
    n_assets = scenarios.anchor.shape[0]
    root = _svg(n_assets * (PANEL_HEIGHT + MARGIN) + MARGIN)
    past = 0 if history is None else history.shape[1]
    for a in range(n_assets):
        paths = scenarios.paths[:, a, :]
        with_anchor = np.concatenate([np.full((paths.shape[0], 1), scenarios.anchor[a]), paths], axis=1)
        lows = [with_anchor.min()]
        highs = [with_anchor.max()]
        if history is not None:
            lows.append(history[a].min())
            highs.append(history[a].max())
        frame = _Frame(
            top=MARGIN + a * (PANEL_HEIGHT + MARGIN),
            height=PANEL_HEIGHT,
            x_range=(-past + 1, scenarios.horizon),
            y_range=(min(lows), max(highs)),
        )
        ticker = scenarios.tickers[a] if scenarios.tickers else f"asset {a + 1}"
        frame.axes(root, f"{ticker}: {scenarios.n} {scenarios.source} scenarios")
        steps = np.arange(0, scenarios.horizon + 1)
        if history is not None:
            _polyline(root, frame.points(np.arange(-past + 1, 1), history[a]), "#000000", 1.5)
        for path in with_anchor[:MAX_PATHS]:
            _polyline(root, frame.points(steps, path), PALETTE[a % len(PALETTE)], 0.8, 0.25)
        for q, width in ((5, 1.0), (50, 2.0), (95, 1.0)):
            _polyline(root, frame.points(steps, np.percentile(with_anchor, q, axis=0)), "#333333", width)
    return root


def risk_return_chart(curves: Dict[str, Sequence[Tuple[float, float]]], title: str = "risk / return") -> ET.Element:
    """One polyline per strategy through its (volatility, return) points ordered by risk level."""
    root = _svg(PANEL_HEIGHT + 2 * MARGIN + 20 * len(curves))
    all_points: List[Tuple[float, float]] = [p for points in curves.values() for p in points]
    if not all_points:
        return root
    vols = np.array([p[0] for p in all_points])
    rets = np.array([p[1] for p in all_points])
    frame = _Frame(MARGIN, PANEL_HEIGHT, (vols.min(), vols.max()), (rets.min(), rets.max()))
    frame.axes(root, title)
    for i, (name, points) in enumerate(sorted(curves.items())):
        color = PALETTE[i % len(PALETTE)]
        xs = np.array([p[0] for p in points])
        ys = np.array([p[1] for p in points])
        _polyline(root, frame.points(xs, ys), color, 1.5)
        legend = ET.SubElement(
            root, "text", x=str(MARGIN), y=str(MARGIN + PANEL_HEIGHT + 20 * (i + 1)), fill=color
        )
        legend.set("font-size", "12")
        legend.text = name
    return root
