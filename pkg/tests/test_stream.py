"""Scheduling, pacing, fan-out, and underflow accounting."""

import time
from hashlib import sha256

import numpy as np
import pytest

from morphcanvas.gaze import CropRegion
from morphcanvas.interpolate import MorphSequence
from morphcanvas.protocol import decode_message
from morphcanvas.stream import (
    ChannelSet,
    CollectorSink,
    BufferedSink,
    FrameScheduler,
    Metrics,
    Pacer,
    RealClock,
    VirtualClock,
)

REGION = CropRegion(4, 6, 8, 8, 8, 1.0)


def make_seq(cycle_index=0, n_frames=6, interval=25.0, caption=None, fill=100):
    frames = [np.full((8, 8, 3), min(fill + 9 * i, 255), dtype=np.uint8) for i in range(n_frames)]
    return MorphSequence(
        cycle_index=cycle_index,
        region=REGION,
        frames=frames,
        frame_interval_ms=interval,
        caption=caption,
        window_open_ms=0.0,
    )


def make_stack(clock=None, capacity=4):
    clock = clock or RealClock()
    metrics = Metrics()
    channels = ChannelSet(metrics)
    scheduler = FrameScheduler(channels, metrics, clock, png_level=0, capacity=capacity)
    return clock, metrics, channels, scheduler


class TestScheduler:
    def test_sequence_span_is_n_plus_1_intervals(self):
        clock, metrics, channels, scheduler = make_stack(VirtualClock())
        seq = make_seq(n_frames=34, interval=31.25)
        scheduled = scheduler.schedule(seq)
        first = scheduled.deadline(0)
        last = scheduled.deadline(33)
        assert last - first == pytest.approx(33 * 31.25)  # 1031.25 for N=32
        assert scheduled.end_ms - scheduled.start_ms == pytest.approx(34 * 31.25)

    def test_first_frame_at_now_when_queue_empty(self):
        clock = VirtualClock()
        clock.sleep_until(5000)
        _, _, _, scheduler = make_stack(clock)
        scheduled = scheduler.schedule(make_seq())
        assert scheduled.start_ms == 5000

    def test_back_to_back_no_overlap(self):
        clock, metrics, channels, scheduler = make_stack(VirtualClock())
        a = scheduler.schedule(make_seq(0))
        b = scheduler.schedule(make_seq(1))
        assert b.start_ms == a.end_ms
        assert b.deadline(0) > a.deadline(len(a.envelopes) - 1)

    def test_min_start_pins_schedule(self):
        clock, _, _, scheduler = make_stack(VirtualClock())
        scheduled = scheduler.schedule(make_seq(), min_start_ms=1234.0)
        assert scheduled.start_ms == 1234.0

    def test_late_continuous_sequence_counts_underflow(self):
        clock = VirtualClock()
        _, metrics, _, scheduler = make_stack(clock)
        a = scheduler.schedule(make_seq(0))
        clock.sleep_until(a.end_ms + 300)
        scheduler.schedule(make_seq(1), continuity=True)
        assert metrics.get("underflows") == 1
        clock.sleep_until(scheduler.prev_end_ms + 500)
        scheduler.schedule(make_seq(2), continuity=False)  # legitimate break
        assert metrics.get("underflows") == 1

    def test_envelopes_carry_region_and_deadlines(self):
        clock, _, channels, scheduler = make_stack(VirtualClock())
        scheduled = scheduler.schedule(make_seq(n_frames=3, interval=40.0))
        emitted = [channels.emit_frame(env) for env in scheduled.envelopes]
        patches = [decode_message(e) for e in emitted]
        assert [p.seq_no for p in patches] == [0, 1, 2]
        assert all((p.x0, p.y0, p.width, p.height) == (4, 6, 8, 8) for p in patches)
        assert [p.present_at_ms for p in patches] == [0, 40, 80]


class TestPacer:
    def run_pacer(self, sequences, immersant=None, bystanders=(), run_for_s=None):
        clock, metrics, channels, scheduler = make_stack()
        immersant = immersant or CollectorSink(clock)
        channels.set_immersant(immersant)
        for b in bystanders:
            channels.add_bystander(b)
        captions = CollectorSink(clock)
        channels.add_caption_sink(captions)
        pacer = Pacer(scheduler, channels, metrics, clock)
        pacer.start()
        for seq in sequences:
            scheduler.schedule(seq)
        total = sum(len(s.frames) for s in sequences)
        deadline = time.monotonic() + (run_for_s or 10.0)
        while metrics.get("frames_emitted") < total and time.monotonic() < deadline:
            time.sleep(0.01)
        pacer.stop()
        clock.stop()
        pacer.join(2.0)
        return clock, metrics, channels, immersant, captions

    def test_emits_all_frames_on_schedule(self):
        seqs = [make_seq(i, n_frames=8, interval=20.0, caption=f"c{i}") for i in range(3)]
        clock, metrics, channels, immersant, captions = self.run_pacer(seqs)
        assert metrics.get("frames_emitted") == 24
        errs = sorted(metrics.emission_errors_ms)
        assert errs[int(0.95 * (len(errs) - 1))] <= 5.0
        # strictly increasing seq_no on the immersant channel
        seq_nos = [decode_message(d).seq_no for _, d in immersant.items]
        assert seq_nos == sorted(seq_nos) and len(set(seq_nos)) == len(seq_nos)

    def test_captions_fire_at_first_frame_in_cycle_order(self):
        seqs = [make_seq(i, n_frames=4, interval=15.0, caption=f"prompt {i}") for i in range(3)]
        _, metrics, _, immersant, captions = self.run_pacer(seqs)
        assert metrics.get("captions_emitted") == 3
        texts = [decode_message(d).cycle_index for _, d in captions.items]
        assert texts == [0, 1, 2]
        # caption time matches its sequence's first frame emission
        first_frame_t = immersant.items[0][0]
        assert captions.items[0][0] == pytest.approx(first_frame_t, abs=10.0)

    def test_broadcast_equality(self):
        bystander = CollectorSink()
        seqs = [make_seq(i, n_frames=5, interval=10.0) for i in range(2)]
        _, _, _, immersant, _ = self.run_pacer(seqs, bystanders=[bystander])
        imm = [sha256(d).hexdigest() for _, d in immersant.items]
        bys = [sha256(d).hexdigest() for _, d in bystander.items]
        assert imm == bys

    def test_slow_bystander_drops_oldest_without_blocking(self):
        slow = BufferedSink(maxlen=3)  # never drained
        seqs = [make_seq(i, n_frames=10, interval=5.0) for i in range(2)]
        clock, metrics, channels, immersant, _ = self.run_pacer(seqs, bystanders=[slow])
        assert metrics.get("frames_emitted") == 20
        assert len(immersant.items) == 20  # immersant unaffected
        assert slow.pending == 3
        assert metrics.get("bystander_drops") == 17
        errs = sorted(metrics.emission_errors_ms)
        assert errs[int(0.95 * (len(errs) - 1))] <= 5.0

    def test_no_frames_no_underflow(self):
        clock, metrics, channels, scheduler = make_stack()
        pacer = Pacer(scheduler, channels, metrics, clock)
        pacer.start()
        time.sleep(0.3)
        pacer.stop()
        clock.stop()
        pacer.join(2.0)
        assert metrics.get("underflows") == 0
        assert metrics.get("frames_emitted") == 0


class TestChannelSet:
    def test_keyframe_interleaves_with_monotone_seq_no(self):
        clock, metrics, channels, scheduler = make_stack(VirtualClock())
        sink = CollectorSink()
        channels.set_immersant(sink)
        scheduled = scheduler.schedule(make_seq(n_frames=2))
        channels.emit_frame(scheduled.envelopes[0])
        from morphcanvas.stream import build_envelope

        key = build_envelope(0, 0, 8, 8, 0, scheduled.envelopes[0][36:])
        channels.emit_frame(key, keyframe=True)
        channels.emit_frame(scheduled.envelopes[1])
        seq_nos = [decode_message(d).seq_no for _, d in sink.items]
        assert seq_nos == [0, 1, 2]
        assert metrics.get("keyframes_emitted") == 1
