"""Synthetic fixtures: an ink-wash style canvas and simulated gaze traces.

Both are deterministic in their seeds so replay tests and demos can pin
exact outputs without shipping binary fixtures.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import imgio
from .protocol import MOUNTED, UNMOUNTED, ControlSignal, GazeSample, encode_message


def _smooth_noise(rng: np.random.Generator, n: int, scale: int) -> np.ndarray:
    coarse = rng.normal(0, 1, n // scale + 2)
    xs = np.arange(n) / scale
    i0 = xs.astype(int)
    frac = xs - i0
    return coarse[i0] * (1 - frac) + coarse[i0 + 1] * frac


def make_canvas(width: int = 2250, height: int = 1500, seed: int = 7) -> np.ndarray:
    """Layered mountain silhouettes over a paper-toned wash, (H, W, 3) uint8."""
    rng = np.random.default_rng(seed)
    xs = np.arange(width)
    img = np.full((height, width), 232.0, dtype=np.float32)
    # atmospheric vertical wash
    img -= np.linspace(0, 14, height, dtype=np.float32)[:, None]
    for layer in range(5):
        base_y = height * (0.30 + 0.14 * layer)
        ridge = base_y + 60 * _smooth_noise(rng, width, 180) + 18 * _smooth_noise(rng, width, 35)
        depth = 36 + 26 * layer
        rows = np.arange(height, dtype=np.float32)[:, None]
        below = rows - ridge[None, :]
        fade = np.clip(below / (140.0 - 18 * layer), 0, 1)
        ink = np.where(below > 0, depth * (1.0 - 0.55 * fade), 0.0)
        img -= ink.astype(np.float32)
    img += rng.normal(0, 1.6, (height, width)).astype(np.float32)
    img = np.clip(img, 18, 245).astype(np.uint8)
    return np.stack([img, img, np.clip(img * 0.94 + 6, 0, 255).astype(np.uint8)], axis=-1)


def write_canvas(path: str | Path, width: int = 2250, height: int = 1500, seed: int = 7) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(imgio.encode_png(make_canvas(width, height, seed), compress_level=6))
    return path


def generate_trace(
    duration_ms: int,
    hz: float = 75.0,
    seed: int = 11,
    wander_speed: float = 0.10,
    dwell_chance: float = 0.012,
    include_controls: bool = True,
) -> list:
    """Simulated gaze: a damped random walk with occasional dwells.

    ``wander_speed`` is in normalized canvas units per second; the default
    keeps one window's extent near the minimum crop so cycles stay cheap.
    Returns protocol messages (controls and samples) in timestamp order.
    """
    rng = np.random.default_rng(seed)
    tick_ms = 1000.0 / hz
    n = int(duration_ms / tick_ms)
    pos = np.array([0.35 + 0.3 * rng.random(), 0.35 + 0.3 * rng.random()])
    vel = np.zeros(2)
    dwell_until = -1
    messages: list = []
    if include_controls:
        messages.append(ControlSignal(MOUNTED, 0))
    per_tick = wander_speed / hz
    for i in range(n):
        ts = round(i * tick_ms)
        if i >= dwell_until and rng.random() < dwell_chance:
            dwell_until = i + int(rng.integers(10, 40))
        if i < dwell_until:
            vel *= 0.55
        vel = 0.86 * vel + rng.normal(0, per_tick * 0.55, 2)
        speed = float(np.hypot(*vel))
        if speed > per_tick * 2.5:
            vel *= per_tick * 2.5 / speed
        pos = pos + vel
        for axis in range(2):
            if pos[axis] < 0.05:
                pos[axis] = 0.05
                vel[axis] = abs(vel[axis])
            elif pos[axis] > 0.95:
                pos[axis] = 0.95
                vel[axis] = -abs(vel[axis])
        messages.append(GazeSample(ts_ms=ts, x=float(pos[0]), y=float(pos[1])))
    if include_controls:
        messages.append(ControlSignal(UNMOUNTED, round(n * tick_ms)))
    return messages


def write_trace(path: str | Path, messages: list) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        for msg in messages:
            fh.write(encode_message(msg))
    return path
