"""Pipeline orchestration: collect -> synthesize/interpolate -> playback.

Cycle timing is planned on a virtual per-session timeline. The first
window fills delta_t after mount; each subsequent snapshot is taken
just-in-time so its sequence is ready when the previous one finishes
playing (demand pacing). With N+2 frames spaced delta_t/N apart, the
steady-state cadence is delta_t * (N+2)/N, within the +/-10% tolerance
of one cycle per delta_t, and first visibility stays well inside
2*delta_t + delta_t'.

Replays plan cycles against trace timestamps rather than arrival wall
time, so the same trace and seeds yield bit-identical session records
whether the replay is paced in real time or run instantly on the
virtual clock.
"""

from __future__ import annotations

import threading
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

from .gaze import GazeWindow, WindowSample, map_to_pixels
from .protocol import MOUNTED, UNMOUNTED, ControlSignal, GazeSample, MalformedMessage, decode_message
from .session import SessionEngine, SessionPhase, archive
from .stream import ChannelSet, FrameScheduler, Metrics, Pacer, RealClock, VirtualClock


class LiveSource:
    """Rolling live window; arrival times are absolute runtime clock ms."""

    def __init__(self, window: GazeWindow):
        self.window = window
        self.epoch_ms = 0.0

    def window_at(self, session_rel_ms: float) -> list[WindowSample]:
        return self.window.snapshot(int(self.epoch_ms + session_rel_ms))

    def next_control_ts(self, after_rel_ms: float) -> int | None:
        return None  # live controls arrive via the queue, not a schedule

    def control_at(self, ts: int) -> ControlSignal | None:
        return None


class TraceSource:
    """Pre-parsed gaze trace; times are session-relative trace timestamps."""

    def __init__(self, samples: list[WindowSample], controls: list[ControlSignal]):
        self.samples = samples
        self.controls = sorted(controls, key=lambda c: c.ts_ms)
        self._ts = [s.arrival_ms for s in samples]

    @classmethod
    def parse(cls, text: str, canvas_w: int, canvas_h: int, delta_t_ms: int) -> "TraceSource":
        samples: list[WindowSample] = []
        controls: list[ControlSignal] = []
        last_ts = -1
        for line_no, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                msg = decode_message(line.encode("utf-8"))
            except MalformedMessage as exc:
                raise ValueError(f"trace line {line_no}: {exc}") from exc
            if isinstance(msg, GazeSample):
                if msg.ts_ms < last_ts:
                    raise ValueError(f"trace line {line_no}: timestamps must be non-decreasing")
                last_ts = msg.ts_ms
                px, py = map_to_pixels(msg.x, msg.y, canvas_w, canvas_h)
                samples.append(WindowSample(msg.ts_ms, px, py))
            elif isinstance(msg, ControlSignal):
                controls.append(msg)
            else:
                raise ValueError(f"trace line {line_no}: only gaze and control messages allowed")
        if not any(c.kind == MOUNTED for c in controls):
            controls.insert(0, ControlSignal(MOUNTED, 0))
        if not any(c.kind == UNMOUNTED for c in controls):
            end = (samples[-1].arrival_ms if samples else 0) + delta_t_ms
            controls.append(ControlSignal(UNMOUNTED, end))
        return cls(samples, controls)

    def window_between(self, open_ms: float, close_ms: float) -> list[WindowSample]:
        lo = bisect_right(self._ts, open_ms)
        hi = bisect_right(self._ts, close_ms)
        return self.samples[lo:hi]


@dataclass
class PipelinePlan:
    """Timing constants derived from the configuration."""

    delta_t_ms: int
    n_frames: int
    sim_inpaint_ms: int
    sim_interp_ms: int
    schedule_margin_ms: int
    empty_retry_ms: int

    @property
    def budget_ms(self) -> int:
        """Wall budget from window snapshot to sequence scheduled."""
        return self.sim_inpaint_ms + self.sim_interp_ms + self.schedule_margin_ms

    @property
    def span_ms(self) -> float:
        """Playback span of one sequence including the trailing slot."""
        return (self.n_frames + 2) * (self.delta_t_ms / self.n_frames)


class Orchestrator(threading.Thread):
    """Single producer stage owning all session mutation."""

    def __init__(
        self,
        engine: SessionEngine,
        scheduler: FrameScheduler,
        metrics: Metrics,
        clock,
        plan: PipelinePlan,
        live_source: LiveSource | None = None,
        trace_source: TraceSource | None = None,
        pacer: Pacer | None = None,
        archive_dir: str | Path | None = None,
        exit_when_idle: bool = False,
        reversal_mode: str = "reverse",  # "reverse" | "archive"
    ):
        super().__init__(name="morphcanvas-orchestrator", daemon=True)
        self.engine = engine
        self.scheduler = scheduler
        self.metrics = metrics
        self.clock = clock
        self.plan = plan
        self.live_source = live_source
        self.trace_source = trace_source
        self.pacer = pacer
        self.archive_dir = Path(archive_dir) if archive_dir else None
        self.exit_when_idle = exit_when_idle
        self.reversal_mode = reversal_mode

        self.epoch_ms = 0.0
        self._next_cycle_rel: float | None = None
        self._stream_broken = True
        self._controls: list[ControlSignal] = []
        self._control_cond = threading.Condition()
        self._stop_event = threading.Event()
        self._trace_cursor = 0
        self.last_manifest: Path | None = None
        self.finished = threading.Event()

    # -- external inputs ------------------------------------------------------

    def submit_control(self, signal: ControlSignal) -> None:
        with self._control_cond:
            self._controls.append(signal)
            self._control_cond.notify_all()

    def stop(self) -> None:
        self._stop_event.set()
        with self._control_cond:
            self._control_cond.notify_all()

    # -- timeline helpers -------------------------------------------------------

    def _now_rel(self) -> float:
        return self.clock.now_ms() - self.epoch_ms

    def _sleep_until_rel(self, rel_ms: float) -> None:
        """Sleep to a session-relative instant, waking early for controls."""
        while not self._stop_event.is_set():
            remaining = rel_ms - self._now_rel()
            if remaining <= 0:
                return
            if isinstance(self.clock, VirtualClock):
                self.clock.sleep_until(self.epoch_ms + rel_ms)
                return
            with self._control_cond:
                if self._controls:
                    return
                self._control_cond.wait(min(remaining / 1000.0, 0.05))

    def _pending_trace_control(self) -> ControlSignal | None:
        if self.trace_source and self._trace_cursor < len(self.trace_source.controls):
            return self.trace_source.controls[self._trace_cursor]
        return None

    def _apply_due_controls(self, up_to_rel: float | None) -> bool:
        """Apply queued live controls and due trace controls. Returns True
        if the session phase changed."""
        changed = False
        with self._control_cond:
            live = list(self._controls)
            self._controls.clear()
        for sig in live:
            changed |= self._handle_signal(sig)
        while True:
            nxt = self._pending_trace_control()
            if nxt is None:
                break
            if up_to_rel is not None and nxt.ts_ms > up_to_rel:
                break
            if up_to_rel is None and nxt.ts_ms > self._now_rel():
                break
            self._trace_cursor += 1
            changed |= self._handle_signal(nxt)
        return changed

    def _handle_signal(self, signal: ControlSignal) -> bool:
        self.metrics.inc("control_signals_received")
        action = self.engine.on_control(signal)
        if action == "start":
            if self.trace_source is not None:
                # trace timestamps are already session-relative
                self.epoch_ms = self.clock.now_ms() - signal.ts_ms
            else:
                self.epoch_ms = self.clock.now_ms()
            if self.live_source is not None:
                self.live_source.window.clear()
                self.live_source.epoch_ms = self.epoch_ms
            self.scheduler.prev_end_ms = None
            self._next_cycle_rel = signal.ts_ms + self.plan.delta_t_ms if self.trace_source else self.plan.delta_t_ms
            self._stream_broken = True
            return True
        if action == "reverse":
            return True
        return False

    # -- main loop ----------------------------------------------------------------

    def run(self) -> None:
        try:
            while not self._stop_event.is_set():
                phase = self.engine.phase
                if phase == SessionPhase.ACTIVE:
                    self._active_step()
                elif phase == SessionPhase.REVERSING:
                    self._run_reversal()
                elif phase == SessionPhase.ARCHIVING:
                    self._archive()
                else:
                    if self._apply_due_controls(None):
                        continue
                    if self.exit_when_idle and self._trace_done():
                        break
                    with self._control_cond:
                        if not self._controls and self._pending_trace_control() is None:
                            self._control_cond.wait(0.05)
                    if self.trace_source is not None and self._pending_trace_control() is not None:
                        nxt = self.trace_source.controls[self._trace_cursor]
                        self._sleep_until_rel(nxt.ts_ms)
        finally:
            self._shutdown_archive()
            self.finished.set()

    def _trace_done(self) -> bool:
        return self.trace_source is None or self._trace_cursor >= len(self.trace_source.controls)

    def _active_step(self) -> None:
        assert self._next_cycle_rel is not None
        s = self._next_cycle_rel
        ctrl = self._pending_trace_control()
        wake_at = min(s, ctrl.ts_ms) if ctrl is not None else s
        self._sleep_until_rel(wake_at)
        if self._stop_event.is_set():
            return
        # controls due at or before this cycle win over the cycle itself
        if self._apply_due_controls(up_to_rel=s if (ctrl is None or ctrl.ts_ms <= s) else None):
            return
        if self._now_rel() < s:
            return  # woken by a live control that changed nothing
        self._attempt_cycle(s)

    def _attempt_cycle(self, s: float) -> None:
        if self.trace_source is not None:
            samples = self.trace_source.window_between(s - self.plan.delta_t_ms, s)
        else:
            samples = self.live_source.window_at(s) if self.live_source else []
        window_open_abs = self.epoch_ms + s - self.plan.delta_t_ms
        seq = self.engine.run_cycle(samples, window_open_ms=window_open_abs)
        if seq is None:
            self._stream_broken = True
            self._next_cycle_rel = s + self.plan.empty_retry_ms
            return
        min_start_abs = self.epoch_ms + s + self.plan.budget_ms
        scheduled = self.scheduler.schedule(
            seq, min_start_ms=min_start_abs, continuity=not self._stream_broken
        )
        self._stream_broken = False
        self.metrics.inc("cycle_count")
        self._next_cycle_rel = (scheduled.end_ms - self.epoch_ms) - self.plan.budget_ms

    def _run_reversal(self) -> None:
        if self.reversal_mode == "archive":
            self.engine.complete_reversal()
            return
        paced = self.pacer is not None
        if paced:
            first = True
            for rec, seq in self.engine.reversal_sequences():
                if self._stop_event.is_set():
                    return
                self.scheduler.schedule(seq, continuity=not first)
                first = False
                self.engine.apply_reversal_patch(rec)
            self.pacer.wait_idle(timeout_s=max(60.0, len(self.engine.record.cycles) * 5.0))
        else:
            for rec in reversed(self.engine.record.cycles):
                self.engine.apply_reversal_patch(rec)
        self.engine.complete_reversal()

    def _archive(self) -> None:
        if self.archive_dir is not None:
            self.last_manifest = archive(self.engine, self.archive_dir)
        else:
            self.engine.phase = SessionPhase.IDLE
        if self.exit_when_idle and self._trace_done():
            self._stop_event.set()

    def _shutdown_archive(self) -> None:
        """Interrupted mid-session: archive the record without reversal."""
        if self.engine.phase in (SessionPhase.ACTIVE, SessionPhase.REVERSING):
            self.engine.force_archive_phase()
            if self.archive_dir is not None:
                self.last_manifest = archive(self.engine, self.archive_dir)
            else:
                self.engine.phase = SessionPhase.IDLE


class PipelineRuntime:
    """Wires the engine, scheduler, pacer, and orchestrator together."""

    def __init__(
        self,
        engine: SessionEngine,
        plan: PipelinePlan,
        archive_dir: str | Path | None = None,
        png_level: int = 1,
        clock: RealClock | VirtualClock | None = None,
        trace_source: TraceSource | None = None,
        exit_when_idle: bool = False,
        reversal_mode: str = "reverse",
        paced: bool = True,
    ):
        self.engine = engine
        self.plan = plan
        self.paced = paced
        self.clock = clock or (RealClock() if paced else VirtualClock())
        self.metrics = Metrics()
        self.channels = ChannelSet(self.metrics)
        self.scheduler = FrameScheduler(
            self.channels, self.metrics, self.clock,
            png_level=png_level, encode=paced, enqueue=paced,
        )
        self.pacer = Pacer(self.scheduler, self.channels, self.metrics, self.clock) if paced else None
        self.window = GazeWindow(plan.delta_t_ms)
        live_source = LiveSource(self.window) if trace_source is None else None
        self.orchestrator = Orchestrator(
            engine=engine,
            scheduler=self.scheduler,
            metrics=self.metrics,
            clock=self.clock,
            plan=plan,
            live_source=live_source,
            trace_source=trace_source,
            pacer=self.pacer,
            archive_dir=archive_dir,
            exit_when_idle=exit_when_idle,
            reversal_mode=reversal_mode,
        )
        self._last_restamp = -1.0
        self._ingest_lock = threading.Lock()
        self._stopped = False
        self._last_keyframe_ms: float | None = None

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> None:
        if self.pacer is not None:
            self.pacer.start()
        self.orchestrator.start()

    def stop(self, timeout_s: float = 30.0) -> None:
        """Idempotent; interrupts the session and forces a final archive."""
        if self._stopped:
            return
        self._stopped = True
        self.orchestrator.stop()
        self.orchestrator.join(timeout_s)
        if self.pacer is not None:
            self.pacer.stop()
        self.scheduler.close()
        self.clock.stop()
        if self.pacer is not None:
            self.pacer.join(5.0)

    def wait_finished(self, timeout_s: float | None = None) -> bool:
        return self.orchestrator.finished.wait(timeout_s)

    # -- ingest -----------------------------------------------------------------

    def ingest_gaze(self, sample: GazeSample) -> None:
        """Re-stamp a gaze sample with the server clock and buffer it."""
        arrival = self.clock.now_ms()
        with self._ingest_lock:
            if arrival < self._last_restamp:
                self.metrics.inc("gaze_restamp_violations")
            self._last_restamp = arrival
            self.metrics.inc("gaze_samples_received")
        self.window.push(sample, self.engine.canvas_w, self.engine.canvas_h, int(arrival))

    def submit_control(self, signal: ControlSignal) -> None:
        self.orchestrator.submit_control(signal)

    # -- introspection ------------------------------------------------------------

    def metrics_text(self) -> str:
        self._sync_engine_counters()
        return self.metrics.render_text(
            extra={
                "phase": self.engine.phase.value,
                "canvas_hash": self.engine.canvas_hash(),
            }
        )

    def _sync_engine_counters(self) -> None:
        c = self.engine.counters
        with self.metrics._lock:
            self.metrics.counters["cycles_skipped_empty"] = c.cycles_skipped_empty
            self.metrics.counters["cycles_skipped_backend"] = c.cycles_skipped_backend
            self.metrics.counters["ignored_signals"] = c.ignored_signals
            self.metrics.counters["backend_corrections"] = self.engine.backend.corrected_responses
