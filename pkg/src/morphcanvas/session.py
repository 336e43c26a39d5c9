"""Session state machine: mount -> morph cycles -> reversal -> archive.

The engine owns the full-resolution canvas and mutates it only during
the active and reversing phases. Every cycle snapshots the region it is
about to repaint (``pre_patch``), so reversal can restore the pristine
canvas bit-exactly by re-applying the snapshots in reverse order, even
when crop regions overlap.

Archives are written atomically (staging directory + rename) and contain
no wall-clock data, so a replayed session with fixed seeds archives to
byte-identical files.
"""

from __future__ import annotations

import enum
import json
import os
import threading
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path
from typing import Iterator

import numpy as np

from . import imgio
from .gaze import CropRegion, StrokeParams, WindowSample, binarize, fit_crop, rasterize
from .interpolate import MorphSequence, TimingModel, build_sequence, interpolate_pair
from .protocol import MOUNTED, UNMOUNTED, BackendBadResponse, BackendUnreachable, ControlSignal
from .synthesis import InpaintBackend, PromptRegistry, next_prompt

ARCHIVE_PNG_LEVEL = 1

SEED_PER_CYCLE = "per_cycle"
SEED_FIXED = "fixed"


class SessionPhase(str, enum.Enum):
    IDLE = "idle"
    ACTIVE = "active"
    REVERSING = "reversing"
    ARCHIVING = "archiving"


@dataclass
class CycleRecord:
    """Everything needed to archive and exactly reverse one morph cycle."""

    cycle_index: int
    region: CropRegion
    prompt_id: int
    seed: int
    caption: str
    pre_patch: np.ndarray
    post_patch: np.ndarray
    frames_archived: int
    mask_patch: np.ndarray | None = None


@dataclass
class SessionRecord:
    session_id: str
    config_snapshot: dict
    cycles: list[CycleRecord] = field(default_factory=list)

    def record_hash(self) -> str:
        """Content hash over the ordered cycle history (for replay checks)."""
        h = sha256()
        for c in self.cycles:
            h.update(
                f"{c.cycle_index}|{c.region.as_tuple()}|{c.region.backend_side}|"
                f"{c.prompt_id}|{c.seed}|".encode()
            )
            h.update(c.pre_patch.tobytes())
            h.update(c.post_patch.tobytes())
        return h.hexdigest()


class IoError(OSError):
    """Archival failed at the filesystem level."""


@dataclass
class EngineCounters:
    ignored_signals: int = 0
    cycles_skipped_empty: int = 0
    cycles_skipped_backend: int = 0


class SessionEngine:
    """Synchronous core of the pipeline; one instance per installation.

    Thread model: all mutation happens on the orchestrator stage; canvas
    snapshots and hashes may be read from any thread.
    """

    def __init__(
        self,
        pristine: np.ndarray,
        timing: TimingModel,
        stroke: StrokeParams,
        backend: InpaintBackend,
        registry: PromptRegistry,
        crop_min_side: int = 256,
        crop_max_side: int = 512,
        seed_policy: str = SEED_PER_CYCLE,
        fixed_seed: int = 0,
        simulated_interp_ms: float | None = None,
        session_id: str = "session",
        config_snapshot: dict | None = None,
        keep_masks: bool = False,
    ):
        if pristine.ndim != 3 or pristine.shape[2] != 3 or pristine.dtype != np.uint8:
            raise ValueError("canvas must be (H, W, 3) uint8")
        self.pristine = pristine.copy()
        self.canvas = pristine.copy()
        self.canvas_h, self.canvas_w = pristine.shape[:2]
        self.timing = timing
        self.stroke = stroke
        self.backend = backend
        self.registry = registry
        self.crop_min_side = crop_min_side
        self.crop_max_side = crop_max_side
        self.seed_policy = seed_policy
        self.fixed_seed = fixed_seed
        self.simulated_interp_ms = simulated_interp_ms
        self.keep_masks = keep_masks

        self.phase = SessionPhase.IDLE
        self.counters = EngineCounters()
        self.record = SessionRecord(session_id, config_snapshot or {})
        self._base_session_id = session_id
        self._session_serial = 0

        self._canvas_lock = threading.Lock()
        self._hash_cache: str | None = None

    # -- control ------------------------------------------------------------

    def on_control(self, signal: ControlSignal) -> str | None:
        """Apply a mount-state signal. Returns "start"/"reverse" when the
        pipeline must react, None when the signal was ignored."""
        if signal.kind == MOUNTED and self.phase == SessionPhase.IDLE:
            self._session_serial += 1
            session_id = self.record.session_id if not self.record.cycles and self._session_serial == 1 \
                else f"{self._base_session_id}-{self._session_serial}"
            self.record = SessionRecord(session_id, self.record.config_snapshot)
            self.phase = SessionPhase.ACTIVE
            return "start"
        if signal.kind == UNMOUNTED and self.phase == SessionPhase.ACTIVE:
            self.phase = SessionPhase.REVERSING
            return "reverse"
        self.counters.ignored_signals += 1
        return None

    # -- cycles ---------------------------------------------------------------

    def next_seed(self, cycle_index: int) -> int:
        if self.seed_policy == SEED_FIXED:
            return self.fixed_seed
        return cycle_index

    def run_cycle(self, samples: list[WindowSample], window_open_ms: int | None = None) -> MorphSequence | None:
        """One morph cycle: mask -> crop -> inpaint -> composite -> interpolate.

        Returns None (canvas untouched) for empty windows or backend
        failures; the installation keeps running either way.
        """
        if self.phase != SessionPhase.ACTIVE:
            raise RuntimeError(f"run_cycle requires the active phase, not {self.phase.value}")
        if not samples:
            self.counters.cycles_skipped_empty += 1
            return None
        heat = rasterize(samples, self.canvas_w, self.canvas_h, self.stroke, prior=None)
        binary = binarize(heat, self.stroke.threshold)
        region = fit_crop(binary, self.canvas_w, self.canvas_h, self.crop_min_side, self.crop_max_side)
        if region is None:
            self.counters.cycles_skipped_empty += 1
            return None
        x0, y0, side = region.x0, region.y0, region.width
        region_mask = binary[y0 : y0 + side, x0 : x0 + side]
        if not region_mask.any():
            # degenerate: the clamped square missed every masked pixel
            self.counters.cycles_skipped_empty += 1
            return None

        cycle_index = len(self.record.cycles)
        prompt = next_prompt(self.registry, cycle_index)
        seed = self.next_seed(cycle_index)
        pre_patch = self.canvas[y0 : y0 + side, x0 : x0 + side].copy()

        if region.backend_side < side:
            crop_in = imgio.resize_rgb(pre_patch, region.backend_side, region.backend_side)
            mask_in = imgio.resize_mask(region_mask, region.backend_side, region.backend_side)
        else:
            crop_in = pre_patch
            mask_in = region_mask
        try:
            result = self.backend.inpaint(crop_in, mask_in, prompt, seed)
        except (BackendUnreachable, BackendBadResponse):
            self.counters.cycles_skipped_backend += 1
            return None
        if region.backend_side < side:
            result = imgio.resize_rgb(result, side, side)
        post_patch = pre_patch.copy()
        sel = region_mask != 0
        post_patch[sel] = result[sel]

        with self._canvas_lock:
            self.canvas[y0 : y0 + side, x0 : x0 + side] = post_patch
            self._hash_cache = None

        self.record.cycles.append(
            CycleRecord(
                cycle_index=cycle_index,
                region=region,
                prompt_id=prompt.id,
                seed=seed,
                caption=prompt.text,
                pre_patch=pre_patch,
                post_patch=post_patch,
                frames_archived=self.timing.n_frames + 2,
                mask_patch=region_mask.copy() if self.keep_masks else None,
            )
        )
        return build_sequence(
            cycle_index=cycle_index,
            region=region,
            pre_patch=pre_patch,
            post_patch=post_patch,
            timing=self.timing,
            simulated_interp_ms=self.simulated_interp_ms,
            caption=prompt.text,
            window_open_ms=window_open_ms,
        )

    # -- reversal -------------------------------------------------------------

    def reversal_sequences(self) -> Iterator[tuple[CycleRecord, MorphSequence]]:
        """Reversed morphs, newest cycle first. Frames are recomputed from
        the recorded patches (interpolation is deterministic) and played
        post -> pre; the caller applies :meth:`apply_reversal_patch` as each
        sequence is consumed."""
        if self.phase != SessionPhase.REVERSING:
            raise RuntimeError(f"reversal requires the reversing phase, not {self.phase.value}")
        for rec in reversed(self.record.cycles):
            forward = build_sequence(
                cycle_index=rec.cycle_index,
                region=rec.region,
                pre_patch=rec.pre_patch,
                post_patch=rec.post_patch,
                timing=self.timing,
                simulated_interp_ms=self.simulated_interp_ms,
            )
            yield rec, forward.reversed()

    def apply_reversal_patch(self, rec: CycleRecord) -> None:
        if self.phase != SessionPhase.REVERSING:
            raise RuntimeError("canvas restitution outside the reversing phase")
        x0, y0, side = rec.region.x0, rec.region.y0, rec.region.width
        with self._canvas_lock:
            self.canvas[y0 : y0 + side, x0 : x0 + side] = rec.pre_patch
            self._hash_cache = None

    def complete_reversal(self) -> None:
        if self.phase != SessionPhase.REVERSING:
            raise RuntimeError("complete_reversal outside the reversing phase")
        self.phase = SessionPhase.ARCHIVING

    def force_archive_phase(self) -> None:
        """Shutdown path: jump straight to archiving without reversal."""
        if self.phase in (SessionPhase.ACTIVE, SessionPhase.REVERSING):
            self.phase = SessionPhase.ARCHIVING

    # -- canvas access ----------------------------------------------------------

    def canvas_snapshot(self) -> np.ndarray:
        with self._canvas_lock:
            return self.canvas.copy()

    def canvas_hash(self) -> str:
        with self._canvas_lock:
            if self._hash_cache is None:
                self._hash_cache = sha256(self.canvas.tobytes()).hexdigest()
            return self._hash_cache


def reversal_plan(engine: SessionEngine) -> Iterator[MorphSequence]:
    """Ordered reversal morphs for the whole session (pure view; canvas
    restitution is applied by the pipeline as sequences are consumed)."""
    for rec in reversed(engine.record.cycles):
        frames = interpolate_pair(rec.pre_patch, rec.post_patch, engine.timing.n_frames)
        yield MorphSequence(
            cycle_index=rec.cycle_index,
            region=rec.region,
            frames=list(reversed(frames)),
            frame_interval_ms=engine.timing.delta_t_ms / engine.timing.n_frames,
        )


def archive(engine: SessionEngine, archive_dir: str | Path) -> Path:
    """Write the session archive atomically; returns the manifest path.

    Layout: <archive_dir>/<session_id>/manifest.json, cycle_<k>_pre.png,
    cycle_<k>_post.png, final.png. An existing directory for the same
    session id is never overwritten; a numeric suffix is appended.
    """
    if engine.phase != SessionPhase.ARCHIVING:
        raise RuntimeError(f"archive requires the archiving phase, not {engine.phase.value}")
    base = Path(archive_dir)
    try:
        base.mkdir(parents=True, exist_ok=True)
        staging = base / f".stage-{engine.record.session_id}-{os.getpid()}"
        if staging.exists():
            _rmtree(staging)
        staging.mkdir()

        cycles_meta = []
        for rec in engine.record.cycles:
            pre_name = f"cycle_{rec.cycle_index}_pre.png"
            post_name = f"cycle_{rec.cycle_index}_post.png"
            (staging / pre_name).write_bytes(imgio.encode_png(rec.pre_patch, ARCHIVE_PNG_LEVEL))
            (staging / post_name).write_bytes(imgio.encode_png(rec.post_patch, ARCHIVE_PNG_LEVEL))
            meta = {
                "index": rec.cycle_index,
                "region": list(rec.region.as_tuple()),
                "backend_side": rec.region.backend_side,
                "scale": rec.region.scale,
                "prompt_id": rec.prompt_id,
                "seed": rec.seed,
                "caption": rec.caption,
                "pre": pre_name,
                "post": post_name,
                "frames": rec.frames_archived,
            }
            if rec.mask_patch is not None:
                mask_name = f"cycle_{rec.cycle_index}_mask.png"
                (staging / mask_name).write_bytes(
                    imgio.encode_png(rec.mask_patch * np.uint8(255), ARCHIVE_PNG_LEVEL)
                )
                meta["mask"] = mask_name
            cycles_meta.append(meta)

        (staging / "final.png").write_bytes(imgio.encode_png(engine.canvas_snapshot(), ARCHIVE_PNG_LEVEL))
        manifest = {
            "session_id": engine.record.session_id,
            "config": engine.record.config_snapshot,
            "canvas": {"width": engine.canvas_w, "height": engine.canvas_h},
            "cycles": cycles_meta,
            "final": "final.png",
        }
        (staging / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

        target = base / engine.record.session_id
        suffix = 1
        while True:
            try:
                os.rename(staging, target)
                break
            except OSError:
                if not target.exists():
                    raise
                suffix += 1
                target = base / f"{engine.record.session_id}-{suffix}"
    except OSError as exc:
        raise IoError(f"archive failed: {exc}") from exc
    engine.phase = SessionPhase.IDLE
    return target / "manifest.json"


def _rmtree(path: Path) -> None:
    for child in path.iterdir():
        if child.is_dir():
            _rmtree(child)
        else:
            child.unlink()
    path.rmdir()
