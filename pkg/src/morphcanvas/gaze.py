"""Gaze-trajectory rasterization: rolling window -> heatmap -> crop region.

The rolling window keeps the last ``delta_t_ms`` of gaze points in canvas
pixels. Rasterization connects consecutive points with velocity-width
capsule strokes, accumulating heat in 0.25 steps so roughly four passes
saturate a pixel. Binarizing the heatmap and fitting a bounded square
around its extent yields the crop sent to the synthesis backend.

Rasterization tests pixel centers at integer coordinates against exact
capsule geometry (no anti-aliasing), so results are bit-deterministic.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .protocol import GazeSample

DEFAULT_CANVAS_WIDTH = 2250
DEFAULT_CANVAS_HEIGHT = 1500

STAMP_INTENSITY = 0.25

WIDTH_LAW_DIRECT = "direct"
WIDTH_LAW_INVERSE = "inverse"


@dataclass(frozen=True)
class StrokeParams:
    """Stroke width law and binarization level."""

    w_min: float = 4.0
    w_max: float = 48.0
    alpha: float = 0.02  # pixels of width per (pixel/second) of velocity
    threshold: float = 0.5
    width_law: str = WIDTH_LAW_DIRECT

    def __post_init__(self):
        if not (0 < self.w_min <= self.w_max):
            raise ValueError("require 0 < w_min <= w_max")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not (0 < self.threshold < 1):
            raise ValueError("threshold must lie in (0, 1)")
        if self.width_law not in (WIDTH_LAW_DIRECT, WIDTH_LAW_INVERSE):
            raise ValueError(f"unknown width law {self.width_law!r}")


def stroke_width(velocity: float, params: StrokeParams) -> float:
    """Stroke width in pixels for a gaze velocity in pixels/second."""
    if velocity < 0:
        raise ValueError("velocity must be >= 0")
    if params.width_law == WIDTH_LAW_INVERSE:
        w = params.w_max - params.alpha * velocity
    else:
        w = params.w_min + params.alpha * velocity
    return min(max(w, params.w_min), params.w_max)


def map_to_pixels(x: float, y: float, width: int, height: int) -> tuple[int, int]:
    """Normalized [0,1] coordinates to integer canvas pixels."""
    px = int(math.floor(x * (width - 1)))
    py = int(math.floor(y * (height - 1)))
    return px, py


@dataclass
class WindowSample:
    arrival_ms: int
    px: int
    py: int


class GazeWindow:
    """Rolling buffer of recent gaze points in canvas pixels.

    Single writer (the ingest path); snapshots may be taken from any
    thread. Samples older than ``delta_t_ms`` are pruned on push and on
    snapshot.
    """

    def __init__(self, delta_t_ms: int):
        self.delta_t_ms = int(delta_t_ms)
        self._samples: deque[WindowSample] = deque()
        self._lock = threading.Lock()

    def push(self, sample: GazeSample, canvas_w: int, canvas_h: int, now_ms: int) -> None:
        px, py = map_to_pixels(sample.x, sample.y, canvas_w, canvas_h)
        with self._lock:
            self._samples.append(WindowSample(now_ms, px, py))
            self._prune(now_ms)

    def push_pixel(self, arrival_ms: int, px: int, py: int) -> None:
        with self._lock:
            self._samples.append(WindowSample(arrival_ms, px, py))
            self._prune(arrival_ms)

    def _prune(self, now_ms: int) -> None:
        cutoff = now_ms - self.delta_t_ms
        while self._samples and self._samples[0].arrival_ms <= cutoff:
            self._samples.popleft()

    def snapshot(self, now_ms: int) -> list[WindowSample]:
        """Samples with arrival in (now_ms - delta_t_ms, now_ms], in order."""
        cutoff = now_ms - self.delta_t_ms
        with self._lock:
            self._prune(now_ms)
            return [s for s in self._samples if cutoff < s.arrival_ms <= now_ms]

    def clear(self) -> None:
        with self._lock:
            self._samples.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._samples)


def push_sample(
    window: GazeWindow, sample: GazeSample, canvas_w: int, canvas_h: int, now_ms: int
) -> GazeWindow:
    """Map a gaze sample to pixels and push it into the rolling window."""
    window.push(sample, canvas_w, canvas_h, now_ms)
    return window


@dataclass
class MaskBitmap:
    """Per-pixel heat in [0, 1] over the full canvas."""

    width: int
    height: int
    values: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros((self.height, self.width), dtype=np.float32)
        assert self.values.shape == (self.height, self.width)

    def copy(self) -> "MaskBitmap":
        return MaskBitmap(self.width, self.height, self.values.copy())


@dataclass(frozen=True)
class CropRegion:
    """Square canvas region routed to the synthesis backend.

    When the square exceeds the backend ceiling the crop is downscaled to
    ``backend_side`` for synthesis and scaled back on composite.
    """

    x0: int
    y0: int
    width: int
    height: int
    backend_side: int
    scale: float

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.width, self.height)


def _stamp(values: np.ndarray, p0: tuple[int, int], p1: tuple[int, int], radius: float) -> None:
    """Add one saturating capsule stamp from p0 to p1 with the given radius."""
    h, w = values.shape
    x_lo = max(0, int(math.floor(min(p0[0], p1[0]) - radius)))
    x_hi = min(w - 1, int(math.ceil(max(p0[0], p1[0]) + radius)))
    y_lo = max(0, int(math.floor(min(p0[1], p1[1]) - radius)))
    y_hi = min(h - 1, int(math.ceil(max(p0[1], p1[1]) + radius)))
    if x_lo > x_hi or y_lo > y_hi:
        return
    ys, xs = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
    dx = float(p1[0] - p0[0])
    dy = float(p1[1] - p0[1])
    len2 = dx * dx + dy * dy
    qx = xs - float(p0[0])
    qy = ys - float(p0[1])
    if len2 == 0.0:
        dist2 = qx * qx + qy * qy
    else:
        t = np.clip((qx * dx + qy * dy) / len2, 0.0, 1.0)
        ex = qx - t * dx
        ey = qy - t * dy
        dist2 = ex * ex + ey * ey
    inside = dist2 <= radius * radius
    block = values[y_lo : y_hi + 1, x_lo : x_hi + 1]
    np.minimum(block + np.where(inside, np.float32(STAMP_INTENSITY), np.float32(0)), 1.0, out=block)


def rasterize(
    samples: list[WindowSample],
    canvas_w: int,
    canvas_h: int,
    params: StrokeParams,
    prior: MaskBitmap | None = None,
) -> MaskBitmap:
    """Stamp the window's polyline into a heatmap on top of ``prior``.

    The first sample stamps a minimal disc; every following sample stamps
    a capsule from its predecessor with radius stroke_width(v)/2, where v
    is the segment velocity in pixels/second. Output dominates ``prior``
    pointwise.
    """
    if prior is None:
        mask = MaskBitmap(canvas_w, canvas_h)
    else:
        mask = prior.copy()
    if not samples:
        return mask
    first = samples[0]
    _stamp(mask.values, (first.px, first.py), (first.px, first.py), params.w_min / 2.0)
    for prev, cur in zip(samples, samples[1:]):
        gap_s = max(cur.arrival_ms - prev.arrival_ms, 1) / 1000.0
        dist = math.hypot(cur.px - prev.px, cur.py - prev.py)
        width = stroke_width(dist / gap_s, params)
        _stamp(mask.values, (prev.px, prev.py), (cur.px, cur.py), width / 2.0)
    return mask


def binarize(mask: MaskBitmap, threshold: float) -> np.ndarray:
    """Threshold the heatmap into a {0,1} uint8 mask (inclusive at the level)."""
    return (mask.values >= np.float32(threshold)).astype(np.uint8)


def fit_crop(
    binary: np.ndarray,
    canvas_w: int,
    canvas_h: int,
    min_side: int = 256,
    max_side: int = 512,
) -> CropRegion | None:
    """Fit the bounded square crop around the mask's nonzero extent.

    Returns None when the mask is empty. The square side is the tight
    bounding box's larger side clamped to [min_side, min(canvas dims)];
    sides beyond ``max_side`` are flagged for fallback scaling via
    ``backend_side``/``scale``.
    """
    rows = np.flatnonzero(binary.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(binary.any(axis=0))
    y_min, y_max = int(rows[0]), int(rows[-1])
    x_min, x_max = int(cols[0]), int(cols[-1])
    bbox_w = x_max - x_min + 1
    bbox_h = y_max - y_min + 1
    side = max(bbox_w, bbox_h)
    side = max(side, min_side)
    side = min(side, canvas_w, canvas_h)
    cx = (x_min + x_max) / 2.0
    cy = (y_min + y_max) / 2.0
    x0 = int(math.floor(cx + 0.5)) - side // 2
    y0 = int(math.floor(cy + 0.5)) - side // 2
    x0 = min(max(x0, 0), canvas_w - side)
    y0 = min(max(y0, 0), canvas_h - side)
    backend_side = min(side, max_side)
    return CropRegion(
        x0=x0, y0=y0, width=side, height=side,
        backend_side=backend_side, scale=side / backend_side,
    )
