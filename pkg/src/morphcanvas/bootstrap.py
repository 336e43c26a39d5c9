"""Build engines and runtimes from a validated Config."""

from __future__ import annotations

import time
from hashlib import sha256
from pathlib import Path

import numpy as np

from . import imgio
from .config import BACKEND_REMOTE, Config
from .gaze import StrokeParams
from .interpolate import TimingModel
from .pipeline import PipelinePlan, PipelineRuntime, TraceSource
from .session import SessionEngine
from .synthesis import MockInpaintBackend, PromptRegistry, RemoteInpaintBackend


def build_registry(cfg: Config) -> PromptRegistry:
    if cfg.prompts:
        return PromptRegistry.from_file(cfg.prompts)
    return PromptRegistry.default()


def build_backend(cfg: Config, simulate: bool = True):
    if cfg.backend == BACKEND_REMOTE:
        return RemoteInpaintBackend(base_url=cfg.remote_url, max_side=cfg.crop_max_side)
    latency = cfg.sim_inpaint_ms if simulate else 0
    return MockInpaintBackend(simulated_latency_ms=latency, max_side=cfg.crop_max_side)


def build_engine(cfg: Config, pristine: np.ndarray, session_id: str,
                 simulate: bool = True) -> SessionEngine:
    return SessionEngine(
        pristine=pristine,
        timing=TimingModel(delta_t_ms=cfg.delta_t_ms, n_frames=cfg.n_frames),
        stroke=StrokeParams(
            w_min=cfg.stroke_w_min, w_max=cfg.stroke_w_max, alpha=cfg.stroke_alpha,
            threshold=cfg.mask_threshold, width_law=cfg.width_law,
        ),
        backend=build_backend(cfg, simulate=simulate),
        registry=build_registry(cfg),
        crop_min_side=cfg.crop_min_side,
        crop_max_side=cfg.crop_max_side,
        seed_policy=cfg.seed_policy,
        fixed_seed=cfg.fixed_seed,
        simulated_interp_ms=cfg.sim_interp_ms if simulate else None,
        session_id=session_id,
        config_snapshot=cfg.snapshot(),
        keep_masks=cfg.dump_masks,
    )


def build_plan(cfg: Config) -> PipelinePlan:
    return PipelinePlan(
        delta_t_ms=cfg.delta_t_ms,
        n_frames=cfg.n_frames,
        sim_inpaint_ms=cfg.sim_inpaint_ms,
        sim_interp_ms=cfg.sim_interp_ms,
        schedule_margin_ms=cfg.schedule_margin_ms,
        empty_retry_ms=cfg.empty_retry_ms,
    )


def live_session_id(cfg: Config) -> str:
    if cfg.session_id:
        return cfg.session_id
    return time.strftime("live-%Y%m%d-%H%M%S")


def replay_session_id(cfg: Config, trace_bytes: bytes) -> str:
    if cfg.session_id:
        return cfg.session_id
    digest = sha256(trace_bytes).hexdigest()[:12]
    return f"replay-{digest}"


def build_live_runtime(cfg: Config, pristine: np.ndarray) -> PipelineRuntime:
    engine = build_engine(cfg, pristine, live_session_id(cfg), simulate=True)
    return PipelineRuntime(
        engine=engine,
        plan=build_plan(cfg),
        archive_dir=cfg.archive_dir,
        png_level=cfg.frame_png_level,
    )


def build_replay_runtime(cfg: Config, pristine: np.ndarray | None = None,
                         trace_text: str | None = None) -> PipelineRuntime:
    """Runtime that feeds a recorded trace and stops after archiving.

    Real-time replays pace playback on the wall clock; fast replays run
    the identical cycle schedule on the virtual clock. Either way the
    cycle windows come from trace timestamps, so archives for the same
    trace and seeds are byte-identical.
    """
    if pristine is None:
        pristine = imgio.load_canvas(cfg.canvas)
    if trace_text is None:
        trace_text = Path(cfg.replay).read_text(encoding="utf-8")
    engine = build_engine(
        cfg, pristine, replay_session_id(cfg, trace_text.encode()),
        simulate=not cfg.replay_fast,
    )
    trace = TraceSource.parse(trace_text, engine.canvas_w, engine.canvas_h, cfg.delta_t_ms)
    return PipelineRuntime(
        engine=engine,
        plan=build_plan(cfg),
        archive_dir=cfg.archive_dir,
        png_level=cfg.frame_png_level,
        trace_source=trace,
        exit_when_idle=True,
        reversal_mode=cfg.replay_end,
        paced=not cfg.replay_fast,
    )


def run_replay(cfg: Config, timeout_s: float = 600.0) -> tuple[PipelineRuntime, Path | None]:
    """Run a replay to completion; returns the runtime and manifest path."""
    runtime = build_replay_runtime(cfg)
    runtime.start()
    finished = runtime.wait_finished(timeout_s)
    runtime.stop()
    if not finished:
        raise TimeoutError("replay did not finish in time")
    return runtime, runtime.orchestrator.last_manifest
