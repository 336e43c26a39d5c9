"""Morph frame generation between keyframes, plus the sequence timing model.

A sequence morphs keyframe A into keyframe B through N intermediate
frames at blend positions t_i = i/(N+1). Frames are computed by recursive
midpoint subdivision: each recursion step blends its subinterval's
endpoint planes at the exact t_i (carried unrounded, so no rounding error
compounds across levels) and rounds half-up only on emission. The result
matches the direct linear formula to within +/-1 per channel; endpoints
are bit-exact copies.

The pipeline's pacing contract lives here too: a sequence spans roughly
2*delta_t + delta_t' of latency end to end and plays back at
delta_t / N milliseconds per frame.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .gaze import CropRegion


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TimingModel:
    """Window length and frame count defining cadence and playback rate."""

    delta_t_ms: int = 1000
    n_frames: int = 32

    def __post_init__(self):
        if self.delta_t_ms <= 0:
            raise ValueError("delta_t_ms must be positive")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")

    @property
    def target_fps(self) -> float:
        return 1000.0 / playback_interval_ms(self)


@dataclass
class MorphSequence:
    """One keyframe pair with its interpolated frames and pacing data."""

    cycle_index: int
    region: CropRegion
    frames: list[np.ndarray]
    frame_interval_ms: float
    delta_t_prime_ms: float = 0.0
    caption: str | None = None
    window_open_ms: int | None = None  # session-relative, for latency metrics

    def reversed(self) -> "MorphSequence":
        """The same morph played backwards (B -> A); used by reversal."""
        return MorphSequence(
            cycle_index=self.cycle_index,
            region=self.region,
            frames=list(reversed(self.frames)),
            frame_interval_ms=self.frame_interval_ms,
            delta_t_prime_ms=self.delta_t_prime_ms,
            caption=None,
            window_open_ms=None,
        )


def _round_half_up(plane: np.ndarray) -> np.ndarray:
    return np.floor(plane + np.float32(0.5)).astype(np.uint8)


def interpolate_pair(a: np.ndarray, b: np.ndarray, n: int) -> list[np.ndarray]:
    """Frames [A, f1..fN, B] morphing uint8 image ``a`` into ``b``.

    Frame i carries round_half_up((1 - t_i) * a + t_i * b) per channel with
    t_i = i/(N+1), evaluated by recursive midpoint subdivision.
    """
    if a.shape != b.shape:
        raise DimensionMismatch(f"keyframe shapes differ: {a.shape} vs {b.shape}")
    if n < 1:
        raise ValueError("n must be >= 1")
    total = n + 2
    frames: list[np.ndarray | None] = [None] * total
    frames[0] = a.copy()
    frames[-1] = b.copy()
    a_f = a.astype(np.float32)
    b_f = b.astype(np.float32)
    # (lo index, hi index, lo plane, hi plane); planes are exact blends.
    stack: list[tuple[int, int, np.ndarray, np.ndarray]] = [(0, total - 1, a_f, b_f)]
    while stack:
        lo, hi, lo_plane, hi_plane = stack.pop()
        mid = (lo + hi) // 2
        if mid == lo:
            continue
        w = np.float32((mid - lo) / (hi - lo))
        mid_plane = (np.float32(1.0) - w) * lo_plane + w * hi_plane
        frames[mid] = _round_half_up(mid_plane)
        stack.append((lo, mid, lo_plane, mid_plane))
        stack.append((mid, hi, mid_plane, hi_plane))
    return frames  # type: ignore[return-value]


def direct_blend(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Single-frame linear blend oracle: round_half_up((1-t)a + tb)."""
    plane = (1.0 - t) * a.astype(np.float64) + t * b.astype(np.float64)
    return np.floor(plane + 0.5).astype(np.uint8)


def sequence_duration_ms(timing: TimingModel, delta_t_prime_ms: float) -> float:
    """End-to-end latency of one sequence: 2*delta_t + delta_t'."""
    if delta_t_prime_ms < 0:
        raise ValueError("delta_t_prime_ms must be >= 0")
    return 2 * timing.delta_t_ms + delta_t_prime_ms


def playback_interval_ms(timing: TimingModel) -> float:
    """Presentation spacing: frame i presents at start + i * interval."""
    return timing.delta_t_ms / timing.n_frames


def build_sequence(
    cycle_index: int,
    region: CropRegion,
    pre_patch: np.ndarray,
    post_patch: np.ndarray,
    timing: TimingModel,
    simulated_interp_ms: float | None = None,
    caption: str | None = None,
    window_open_ms: int | None = None,
) -> MorphSequence:
    """Interpolate one cycle's keyframe pair and record delta_t'.

    ``simulated_interp_ms`` floors the stage's wall time (sleeping out the
    remainder) so timing behaviour can be pinned in tests and replays.
    """
    t0 = time.perf_counter()
    frames = interpolate_pair(pre_patch, post_patch, timing.n_frames)
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    if simulated_interp_ms is not None and elapsed_ms < simulated_interp_ms:
        time.sleep((simulated_interp_ms - elapsed_ms) / 1000.0)
        elapsed_ms = simulated_interp_ms
    return MorphSequence(
        cycle_index=cycle_index,
        region=region,
        frames=frames,
        frame_interval_ms=playback_interval_ms(timing),
        delta_t_prime_ms=elapsed_ms,
        caption=caption,
        window_open_ms=window_open_ms,
    )
