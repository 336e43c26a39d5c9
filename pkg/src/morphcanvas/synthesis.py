"""Inpainting backends and the prompt registry.

The mock backend is the deterministic stand-in for the fine-tuned
diffusion service: inside the mask it applies seeded value-noise
displacement and a luminance ramp toward darkness, so every downstream
contract (region replacement, progressive morphing, exact reversal) can
be exercised without a model. The remote backend speaks the multipart
wire format to a real synthesis endpoint.

Both backends guarantee that pixels outside the mask are returned
bit-identical; remote responses that violate this are corrected by
compositing and counted, not rejected.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path

import httpx
import numpy as np

from . import imgio
from .protocol import INPAINT_PATH, BackendBadResponse, BackendUnreachable, build_synth_request

DEFAULT_SIMULATED_LATENCY_MS = 410

# Thematic prompt list used when no prompt file is configured. One line
# becomes one caption; ids follow line order.
DEFAULT_PROMPTS = [
    "wildfire consumes the ridge",
    "smog settles over the valley",
    "floodwater swallows the terraced fields",
    "clear-cut slopes where the pines stood",
    "an oil slick spreads across the still river",
    "smokestacks rise behind the mist",
    "drought cracks the lake bed open",
    "plastic debris gathers at the waterfall",
    "strip mines carve the mountain face",
    "dead fish drift past the fisherman's boat",
]


class EmptyRegistry(ValueError):
    """A prompt registry with no entries cannot serve a cycle."""


@dataclass(frozen=True)
class PromptEntry:
    """One thematic prompt; ``precomputed`` stands in for a cached embedding."""

    id: int
    text: str
    precomputed: str

    @staticmethod
    def make(idx: int, text: str) -> "PromptEntry":
        return PromptEntry(id=idx, text=text, precomputed=sha256(text.encode()).hexdigest())


class PromptRegistry:
    """Dense, ordered prompt table; cycles walk it round-robin."""

    def __init__(self, texts: list[str]):
        for i, text in enumerate(texts):
            if not text.strip():
                raise ValueError(f"prompt {i} is empty")
        self.entries = [PromptEntry.make(i, t.strip()) for i, t in enumerate(texts)]

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptRegistry":
        text = Path(path).read_text(encoding="utf-8")
        lines = [ln for ln in text.splitlines()]
        while lines and not lines[-1].strip():
            lines.pop()
        return cls(lines)

    @classmethod
    def default(cls) -> "PromptRegistry":
        return cls(list(DEFAULT_PROMPTS))

    def __len__(self) -> int:
        return len(self.entries)


def next_prompt(registry: PromptRegistry, cycle_index: int) -> PromptEntry:
    """Deterministic round-robin prompt for a cycle."""
    if len(registry) == 0:
        raise EmptyRegistry("prompt registry has no entries")
    return registry.entries[cycle_index % len(registry)]


class InpaintBackend:
    """Replaces the masked region of a crop; unmasked pixels pass through."""

    #: responses that touched unmasked pixels and were corrected
    corrected_responses: int = 0

    def inpaint(self, crop: np.ndarray, mask: np.ndarray, prompt: PromptEntry, seed: int) -> np.ndarray:
        raise NotImplementedError


def _check_args(crop: np.ndarray, mask: np.ndarray, max_side: int) -> None:
    if crop.ndim != 3 or crop.shape[2] != 3 or crop.dtype != np.uint8:
        raise ValueError("crop must be (H, W, 3) uint8")
    if mask.shape != crop.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match crop {crop.shape[:2]}")
    if max(crop.shape[:2]) > max_side:
        raise ValueError(f"crop side {max(crop.shape[:2])} exceeds backend limit {max_side}")


def _value_noise(rng: np.random.Generator, h: int, w: int, cell: int, amp: float) -> np.ndarray:
    """Bilinear value noise in [-amp, amp], shape (2, h, w)."""
    gh = h // cell + 2
    gw = w // cell + 2
    grid = rng.uniform(-amp, amp, size=(2, gh, gw))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[:, y0][:, :, x0]
    g01 = grid[:, y0][:, :, x0 + 1]
    g10 = grid[:, y0 + 1][:, :, x0]
    g11 = grid[:, y0 + 1][:, :, x0 + 1]
    top = g00 * (1 - fx) + g01 * fx
    bot = g10 * (1 - fx) + g11 * fx
    return top * (1 - fy) + bot * fy


class MockInpaintBackend(InpaintBackend):
    """Deterministic degradation: displace with value noise, darken toward 0.

    Mean luminance over the masked pixels strictly decreases on every call
    unless it is already zero, so repeated cycles produce a monotone decay
    the session tests can rely on.
    """

    DARKEN_TARGET = 0.85  # masked mean luminance multiplier per application
    NOISE_CELL = 16
    NOISE_AMP = 5.0

    def __init__(self, simulated_latency_ms: int = 0, max_side: int = 512):
        self.simulated_latency_ms = simulated_latency_ms
        self.max_side = max_side
        self.corrected_responses = 0

    def inpaint(self, crop, mask, prompt, seed):
        _check_args(crop, mask, self.max_side)
        if self.simulated_latency_ms > 0:
            time.sleep(self.simulated_latency_ms / 1000.0)
        sel = mask != 0
        if not sel.any():
            return crop.copy()
        m0 = float(crop[sel].mean())
        if m0 == 0.0:
            return crop.copy()
        h, w = crop.shape[:2]
        rng = np.random.default_rng(np.random.SeedSequence([int(prompt.id), int(seed)]))
        disp = _value_noise(rng, h, w, self.NOISE_CELL, self.NOISE_AMP)
        yy, xx = np.mgrid[0:h, 0:w]
        src_y = np.clip(np.rint(yy + disp[0]), 0, h - 1).astype(np.intp)
        src_x = np.clip(np.rint(xx + disp[1]), 0, w - 1).astype(np.intp)
        displaced = crop[src_y, src_x].astype(np.float64)
        # radial ramp: deeper darkening toward the region center
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        r = np.hypot((yy - cy) / max(cy, 1.0), (xx - cx) / max(cx, 1.0)) / np.sqrt(2.0)
        candidate = displaced * (0.72 + 0.2 * r)[..., None]
        m1 = float(candidate[sel].mean())
        target = self.DARKEN_TARGET * m0
        if m1 > target and m1 > 0:
            candidate *= target / m1
        out = crop.copy()
        out[sel] = np.floor(candidate[sel]).astype(np.uint8)
        return out


class RemoteInpaintBackend(InpaintBackend):
    """Client for a remote synthesis endpoint speaking the multipart format.

    ``client`` may be any httpx-compatible client (the test suite injects
    an in-process ASGI client); by default one is built for ``base_url``.
    """

    def __init__(self, base_url: str = "", client: httpx.Client | None = None,
                 max_side: int = 512, timeout_s: float = 30.0):
        if client is None:
            client = httpx.Client(base_url=base_url, timeout=timeout_s)
        self.client = client
        self.corrected_responses = 0
        self.max_side = max_side

    def inpaint(self, crop, mask, prompt, seed):
        _check_args(crop, mask, self.max_side)
        crop_png = imgio.encode_png(crop)
        mask_png = imgio.encode_png((mask != 0).astype(np.uint8) * np.uint8(255))
        content_type, body = build_synth_request(crop_png, mask_png, prompt.id, seed)
        try:
            resp = self.client.post(INPAINT_PATH, content=body, headers={"content-type": content_type})
        except httpx.HTTPError as exc:
            raise BackendUnreachable(f"synthesis endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendBadResponse(f"synthesis endpoint returned HTTP {resp.status_code}")
        try:
            result = imgio.decode_png_rgb(resp.content)
        except Exception:
            raise BackendBadResponse("synthesis endpoint returned a non-image reply") from None
        if result.shape != crop.shape:
            raise BackendBadResponse(
                f"synthesis endpoint returned {result.shape[1]}x{result.shape[0]} "
                f"for a {crop.shape[1]}x{crop.shape[0]} request"
            )
        sel = mask != 0
        out = crop.copy()
        out[sel] = result[sel]
        if not np.array_equal(result[~sel], crop[~sel]):
            self.corrected_responses += 1
        return out
