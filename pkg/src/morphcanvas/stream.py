"""Frame pacing and fan-out to the immersant and bystander channels.

The scheduler stamps each sequence's presentation times (back to back
with its predecessor, never overlapping) and pre-encodes the frame
envelopes; the pacer thread then emits every frame within a few
milliseconds of its deadline. Sequence numbers are allocated at emission
time under the channel lock, so the patch stream is strictly ordered per
channel even when out-of-band keyframes are interleaved.

Slow bystanders drop oldest and never block the pacer; the immersant
channel is unbounded and instead applies backpressure to playback when
it falls more than two sequences behind.
"""

from __future__ import annotations

import struct
import threading
import time
from collections import deque
from dataclasses import dataclass

from .interpolate import MorphSequence
from .protocol import CaptionEvent, encode_message
from . import imgio

UNDERFLOW_TOLERANCE_MS = 5.0
IMMERSANT_BACKPRESSURE_SEQUENCES = 2

_SEQ_NO_OFFSET = 4  # u32 right after the envelope magic


class RealClock:
    """Monotonic millisecond clock with interruptible precise sleeps."""

    def __init__(self):
        self._t0 = time.monotonic()
        self._stop_event = threading.Event()

    def now_ms(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0

    def sleep_until(self, deadline_ms: float) -> None:
        """Sleep until the deadline; coarse wait then a short fine loop."""
        while not self._stop_event.is_set():
            remaining = deadline_ms - self.now_ms()
            if remaining <= 0:
                return
            if remaining > 2.5:
                self._stop_event.wait((remaining - 2.0) / 1000.0)
            else:
                time.sleep(0.0003)

    def sleep_ms(self, ms: float) -> None:
        self.sleep_until(self.now_ms() + ms)

    def stop(self) -> None:
        self._stop_event.set()

    @property
    def stopped(self) -> bool:
        return self._stop_event.is_set()


class VirtualClock:
    """Deterministic clock for fast replays: sleeping advances time."""

    def __init__(self):
        self._now = 0.0

    def now_ms(self) -> float:
        return self._now

    def sleep_until(self, deadline_ms: float) -> None:
        self._now = max(self._now, deadline_ms)

    def sleep_ms(self, ms: float) -> None:
        self._now += max(ms, 0.0)

    def stop(self) -> None:
        pass

    @property
    def stopped(self) -> bool:
        return False


class Metrics:
    """Thread-safe counter set backing the plain-text metrics endpoint."""

    def __init__(self):
        self._lock = threading.Lock()
        self.counters: dict[str, int] = {
            "frames_emitted": 0,
            "underflows": 0,
            "bystander_drops": 0,
            "cycle_count": 0,
            "captions_emitted": 0,
            "keyframes_emitted": 0,
            "gaze_samples_received": 0,
            "gaze_restamp_violations": 0,
            "control_signals_received": 0,
            "cycles_skipped_empty": 0,
            "cycles_skipped_backend": 0,
            "playback_stalls": 0,
            "backend_corrections": 0,
        }
        self.emission_errors_ms: list[float] = []
        self.first_visibility_ms: list[float] = []
        self.emission_times_ms: list[float] = []
        self.sequence_starts: list[tuple[int, float]] = []

    def inc(self, name: str, amount: int = 1) -> None:
        with self._lock:
            self.counters[name] = self.counters.get(name, 0) + amount

    def get(self, name: str) -> int:
        with self._lock:
            return self.counters.get(name, 0)

    def record_emission(self, err_ms: float, at_ms: float) -> None:
        with self._lock:
            self.counters["frames_emitted"] += 1
            self.emission_errors_ms.append(err_ms)
            self.emission_times_ms.append(at_ms)

    def record_first_visibility(self, cycle_index: int, latency_ms: float, start_ms: float) -> None:
        with self._lock:
            self.first_visibility_ms.append(latency_ms)
            self.sequence_starts.append((cycle_index, start_ms))

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self.counters)

    def render_text(self, extra: dict[str, str] | None = None) -> str:
        with self._lock:
            lines = [f"{k} {v}" for k, v in sorted(self.counters.items())]
            if self.emission_errors_ms:
                errs = sorted(self.emission_errors_ms)
                lines.append(f"emission_error_p95_ms {errs[int(0.95 * (len(errs) - 1))]:.3f}")
            if self.first_visibility_ms:
                lines.append(f"first_visibility_max_ms {max(self.first_visibility_ms):.1f}")
        for k, v in (extra or {}).items():
            lines.append(f"{k} {v}")
        return "\n".join(lines) + "\n"


class CollectorSink:
    """In-process sink recording (arrival_ms, bytes); used by tests."""

    def __init__(self, clock: RealClock | VirtualClock | None = None):
        self.clock = clock
        self.items: list[tuple[float, bytes]] = []
        self._lock = threading.Lock()

    def offer(self, data: bytes) -> bool:
        now = self.clock.now_ms() if self.clock else 0.0
        with self._lock:
            self.items.append((now, data))
        return True

    @property
    def pending(self) -> int:
        return 0

    def close(self) -> None:
        pass


class BufferedSink:
    """Bounded drop-oldest buffer bridging the pacer to a socket writer."""

    def __init__(self, maxlen: int = 256, on_data=None):
        self._deque: deque[bytes] = deque()
        self.maxlen = maxlen
        self._lock = threading.Lock()
        self._on_data = on_data
        self.dropped = 0
        self.closed = False

    def offer(self, data: bytes) -> bool:
        ok = True
        with self._lock:
            if self.closed:
                return False
            if self.maxlen and len(self._deque) >= self.maxlen:
                self._deque.popleft()
                self.dropped += 1
                ok = False
            self._deque.append(data)
        if self._on_data is not None:
            self._on_data()
        return ok

    def drain(self) -> list[bytes]:
        with self._lock:
            items = list(self._deque)
            self._deque.clear()
        return items

    @property
    def pending(self) -> int:
        with self._lock:
            return len(self._deque)

    def close(self) -> None:
        with self._lock:
            self.closed = True
            self._deque.clear()


class ChannelSet:
    """Immersant + bystander frame sinks and caption sinks.

    Every frame goes to the immersant and to each bystander; sequence
    numbers are allocated here, at emission, under one lock.
    """

    def __init__(self, metrics: Metrics):
        self.metrics = metrics
        self._lock = threading.Lock()
        self.immersant = None
        self.bystanders: list = []
        self.caption_sinks: list = []
        self._next_seq = 0

    def set_immersant(self, sink) -> None:
        with self._lock:
            self.immersant = sink

    def add_bystander(self, sink) -> None:
        with self._lock:
            self.bystanders.append(sink)

    def remove_sink(self, sink) -> None:
        with self._lock:
            if self.immersant is sink:
                self.immersant = None
            if sink in self.bystanders:
                self.bystanders.remove(sink)
            if sink in self.caption_sinks:
                self.caption_sinks.remove(sink)

    def add_caption_sink(self, sink) -> None:
        with self._lock:
            self.caption_sinks.append(sink)

    def has_frame_sinks(self) -> bool:
        with self._lock:
            return self.immersant is not None or bool(self.bystanders)

    def immersant_pending(self) -> int:
        with self._lock:
            return self.immersant.pending if self.immersant is not None else 0

    def emit_frame(self, envelope: bytearray, keyframe: bool = False) -> bytes:
        """Stamp the next seq_no into the envelope and broadcast it."""
        with self._lock:
            struct.pack_into("<I", envelope, _SEQ_NO_OFFSET, self._next_seq)
            self._next_seq += 1
            data = bytes(envelope)
            immersant = self.immersant
            bystanders = list(self.bystanders)
        if keyframe:
            self.metrics.inc("keyframes_emitted")
        if immersant is not None:
            immersant.offer(data)
        for sink in bystanders:
            if not sink.offer(data):
                self.metrics.inc("bystander_drops")
        return data

    def emit_caption(self, caption: CaptionEvent) -> None:
        data = encode_message(caption)
        with self._lock:
            sinks = list(self.caption_sinks)
        for sink in sinks:
            sink.offer(data)
        self.metrics.inc("captions_emitted")


def emit_caption(prompt_text: str, cycle_index: int, channels: ChannelSet) -> None:
    channels.emit_caption(CaptionEvent(text=prompt_text, cycle_index=cycle_index))


def build_envelope(
    x0: int, y0: int, width: int, height: int, present_at_ms: int, payload: bytes
) -> bytearray:
    """Frame envelope with a zero seq_no placeholder (stamped at emission)."""
    header = struct.pack(
        "<4s5IQI", b"MCV1", 0, x0, y0, width, height, max(int(present_at_ms), 0), len(payload)
    )
    return bytearray(header + payload)


@dataclass
class ScheduledSequence:
    """A morph sequence with stamped deadlines and pre-encoded envelopes."""

    cycle_index: int
    start_ms: float
    interval_ms: float
    n_frames: int
    envelopes: list[bytearray]
    caption: str | None = None
    window_open_ms: float | None = None

    @property
    def end_ms(self) -> float:
        # slot after the last frame, so back-to-back sequences keep a
        # uniform inter-frame spacing with no presentation-time overlap
        return self.start_ms + self.n_frames * self.interval_ms

    def deadline(self, i: int) -> float:
        return self.start_ms + i * self.interval_ms


class FrameScheduler:
    """Stamps presentation times and hands sequences to the pacer.

    The handoff queue is bounded (capacity 2): a producer running ahead
    of playback blocks here, which is what throttles cycle cadence to the
    playback span.
    """

    def __init__(self, channels: ChannelSet, metrics: Metrics, clock, png_level: int = 1,
                 capacity: int = 2, encode: bool = True, enqueue: bool = True):
        self.channels = channels
        self.metrics = metrics
        self.clock = clock
        self.png_level = png_level
        self.capacity = capacity
        self.encode = encode
        self.enqueue = enqueue
        self.queue: deque[ScheduledSequence] = deque()
        self.cond = threading.Condition()
        self.prev_end_ms: float | None = None
        self._closed = False

    def schedule(self, seq: MorphSequence, min_start_ms: float | None = None,
                 continuity: bool = True) -> ScheduledSequence:
        """Encode and enqueue one sequence; blocks while the queue is full.

        ``min_start_ms`` pins the start to the pipeline's nominal timeline;
        the start never precedes now or the previous sequence's end. A
        late start on a continuous stream counts one underflow.
        """
        now = self.clock.now_ms()
        start = now
        if self.prev_end_ms is not None:
            start = max(start, self.prev_end_ms)
        if min_start_ms is not None:
            start = max(start, min_start_ms)
        if (
            continuity
            and self.prev_end_ms is not None
            and start > self.prev_end_ms + UNDERFLOW_TOLERANCE_MS
        ):
            self.metrics.inc("underflows")
        x0, y0, w, h = seq.region.as_tuple()
        envelopes = []
        if self.encode:
            for i, frame in enumerate(seq.frames):
                payload = imgio.encode_png(frame, self.png_level)
                envelopes.append(
                    build_envelope(x0, y0, w, h, round(start + i * seq.frame_interval_ms), payload)
                )
        scheduled = ScheduledSequence(
            cycle_index=seq.cycle_index,
            start_ms=start,
            interval_ms=seq.frame_interval_ms,
            n_frames=len(seq.frames),
            envelopes=envelopes,
            caption=seq.caption,
            window_open_ms=seq.window_open_ms,
        )
        self.prev_end_ms = scheduled.end_ms
        if not self.enqueue:
            return scheduled
        with self.cond:
            while len(self.queue) >= self.capacity and not self._closed:
                self.cond.wait(0.05)
            if self._closed:
                return scheduled
            self.queue.append(scheduled)
            self.cond.notify_all()
        return scheduled

    def pop(self, timeout_s: float = 0.1) -> ScheduledSequence | None:
        with self.cond:
            if not self.queue:
                self.cond.wait(timeout_s)
            if not self.queue:
                return None
            item = self.queue.popleft()
            self.cond.notify_all()
            return item

    def pending(self) -> int:
        with self.cond:
            return len(self.queue)

    def close(self) -> None:
        with self.cond:
            self._closed = True
            self.cond.notify_all()


class Pacer(threading.Thread):
    """Dedicated pacing stage: emits every scheduled frame at its deadline."""

    def __init__(self, scheduler: FrameScheduler, channels: ChannelSet, metrics: Metrics, clock):
        super().__init__(name="morphcanvas-pacer", daemon=True)
        self.scheduler = scheduler
        self.channels = channels
        self.metrics = metrics
        self.clock = clock
        self._stop_event = threading.Event()
        self._idle = threading.Event()
        self._idle.set()

    def stop(self) -> None:
        self._stop_event.set()

    def run(self) -> None:
        while not self._stop_event.is_set():
            seq = self.scheduler.pop(timeout_s=0.1)
            if seq is None:
                self._idle.set()
                continue
            self._idle.clear()
            self._play(seq)
        self._idle.set()

    def _play(self, seq: ScheduledSequence) -> None:
        # immersant backpressure: let a congested immersant drain before
        # starting another sequence rather than burying it
        limit = IMMERSANT_BACKPRESSURE_SEQUENCES * max(len(seq.envelopes), 1)
        stalled = False
        while self.channels.immersant_pending() > limit and not self._stop_event.is_set():
            if not stalled:
                self.metrics.inc("playback_stalls")
                stalled = True
            time.sleep(0.005)
        for i, envelope in enumerate(seq.envelopes):
            deadline = seq.deadline(i)
            self.clock.sleep_until(deadline)
            if self._stop_event.is_set():
                return
            now = self.clock.now_ms()
            self.channels.emit_frame(envelope)
            self.metrics.record_emission(now - deadline, now)
            if i == 0:
                if seq.caption is not None:
                    emit_caption(seq.caption, seq.cycle_index, self.channels)
                if seq.window_open_ms is not None:
                    self.metrics.record_first_visibility(
                        seq.cycle_index, now - seq.window_open_ms, seq.start_ms
                    )

    def wait_idle(self, timeout_s: float = 5.0) -> bool:
        """Block until the queue is drained and playback finished."""
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            if self.scheduler.pending() == 0 and self._idle.is_set():
                return True
            time.sleep(0.01)
        return False
