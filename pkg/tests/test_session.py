"""State machine, cycle compositing, reversal restitution, and archival."""

import json

import numpy as np
import pytest

from conftest import make_test_canvas
from morphcanvas.gaze import StrokeParams, WindowSample
from morphcanvas.interpolate import TimingModel
from morphcanvas.protocol import ControlSignal
from morphcanvas.session import (
    SessionEngine,
    SessionPhase,
    archive,
    reversal_plan,
)
from morphcanvas.synthesis import MockInpaintBackend, PromptRegistry


def make_engine(width=300, height=200, n_frames=4, keep_masks=False, session_id="s-test"):
    return SessionEngine(
        pristine=make_test_canvas(width, height),
        timing=TimingModel(delta_t_ms=1000, n_frames=n_frames),
        stroke=StrokeParams(),
        backend=MockInpaintBackend(simulated_latency_ms=0),
        registry=PromptRegistry.default(),
        session_id=session_id,
        keep_masks=keep_masks,
    )


def dwell_samples(px, py, count=6, start_ms=0, step_ms=13):
    return [WindowSample(start_ms + i * step_ms, px, py) for i in range(count)]


def wander_samples(rng, w, h, count=12):
    x = int(rng.integers(20, w - 20))
    y = int(rng.integers(20, h - 20))
    out = []
    t = 0
    for _ in range(count):
        t += int(rng.integers(10, 16))
        x = int(np.clip(x + rng.integers(-4, 5), 0, w - 1))
        y = int(np.clip(y + rng.integers(-4, 5), 0, h - 1))
        out.append(WindowSample(t, x, y))
    return out


class TestControl:
    def test_mount_from_idle_starts(self):
        eng = make_engine()
        assert eng.on_control(ControlSignal("mounted", 0)) == "start"
        assert eng.phase == SessionPhase.ACTIVE

    def test_repeat_mount_ignored_and_counted(self):
        eng = make_engine()
        eng.on_control(ControlSignal("mounted", 0))
        assert eng.on_control(ControlSignal("mounted", 10)) is None
        assert eng.phase == SessionPhase.ACTIVE
        assert eng.counters.ignored_signals == 1

    def test_unmount_from_active_reverses(self):
        eng = make_engine()
        eng.on_control(ControlSignal("mounted", 0))
        assert eng.on_control(ControlSignal("unmounted", 500)) == "reverse"
        assert eng.phase == SessionPhase.REVERSING

    def test_unmount_in_idle_ignored(self):
        eng = make_engine()
        assert eng.on_control(ControlSignal("unmounted", 0)) is None
        assert eng.phase == SessionPhase.IDLE
        assert eng.counters.ignored_signals == 1


class TestRunCycle:
    def test_empty_window_returns_none(self):
        eng = make_engine()
        eng.on_control(ControlSignal("mounted", 0))
        before = eng.canvas_hash()
        assert eng.run_cycle([]) is None
        assert eng.canvas_hash() == before
        assert eng.counters.cycles_skipped_empty == 1

    def test_requires_active_phase(self):
        eng = make_engine()
        with pytest.raises(RuntimeError):
            eng.run_cycle(dwell_samples(100, 100))

    def test_cycle_changes_canvas_only_inside_masked_region(self):
        eng = make_engine()
        eng.on_control(ControlSignal("mounted", 0))
        seq = eng.run_cycle(dwell_samples(150, 100))
        assert seq is not None
        rec = eng.record.cycles[0]
        x0, y0, side = rec.region.x0, rec.region.y0, rec.region.width
        diff = np.any(eng.canvas != eng.pristine, axis=2)
        ys, xs = np.nonzero(diff)
        assert ys.size > 0
        assert (x0 <= xs).all() and (xs < x0 + side).all()
        assert (y0 <= ys).all() and (ys < y0 + side).all()
        # every changed pixel was inside the cycle's binary mask
        heat_mask = np.zeros_like(diff)
        heat_mask[y0 : y0 + side, x0 : x0 + side] = rec.mask_patch if rec.mask_patch is not None else True
        eng2 = make_engine(keep_masks=True)
        eng2.on_control(ControlSignal("mounted", 0))
        eng2.run_cycle(dwell_samples(150, 100))
        rec2 = eng2.record.cycles[0]
        inside = np.zeros_like(diff)
        inside[y0 : y0 + side, x0 : x0 + side] = rec2.mask_patch.astype(bool)
        assert (diff <= inside).all()

    def test_sequence_endpoints_match_patches(self):
        eng = make_engine()
        eng.on_control(ControlSignal("mounted", 0))
        seq = eng.run_cycle(dwell_samples(150, 100))
        rec = eng.record.cycles[0]
        assert np.array_equal(seq.frames[0], rec.pre_patch)
        assert np.array_equal(seq.frames[-1], rec.post_patch)
        assert seq.caption == rec.caption

    def test_backend_failure_skips_cycle(self):
        from morphcanvas.protocol import BackendUnreachable

        class DeadBackend(MockInpaintBackend):
            def inpaint(self, *a, **k):
                raise BackendUnreachable("down")

        eng = make_engine()
        eng.backend = DeadBackend(simulated_latency_ms=0)
        eng.on_control(ControlSignal("mounted", 0))
        before = eng.canvas_hash()
        assert eng.run_cycle(dwell_samples(150, 100)) is None
        assert eng.canvas_hash() == before
        assert eng.counters.cycles_skipped_backend == 1

    def test_fallback_scaling_cycle_restores_exactly(self, rng):
        # a wide sweep forces side > backend max and the downscale path
        eng = SessionEngine(
            pristine=make_test_canvas(900, 700),
            timing=TimingModel(1000, 2),
            stroke=StrokeParams(),
            backend=MockInpaintBackend(simulated_latency_ms=0),
            registry=PromptRegistry.default(),
        )
        eng.on_control(ControlSignal("mounted", 0))
        sweep = [WindowSample(20 * i, 100 + 60 * i, 100 + 45 * i) for i in range(11)]
        seq = eng.run_cycle(sweep)
        assert seq is not None
        rec = eng.record.cycles[0]
        assert rec.region.width > 512
        assert rec.region.backend_side == 512
        assert rec.region.scale == rec.region.width / 512
        eng.on_control(ControlSignal("unmounted", 999))
        for rec, _ in eng.reversal_sequences():
            eng.apply_reversal_patch(rec)
        assert np.array_equal(eng.canvas, eng.pristine)


class TestReversal:
    def test_two_cycles_then_reversal_restores_pristine(self):
        eng = make_engine()
        eng.on_control(ControlSignal("mounted", 0))
        assert eng.run_cycle(dwell_samples(150, 100)) is not None
        assert eng.run_cycle(dwell_samples(160, 110, start_ms=1000)) is not None
        assert not np.array_equal(eng.canvas, eng.pristine)
        eng.on_control(ControlSignal("unmounted", 2000))
        for rec, seq in eng.reversal_sequences():
            eng.apply_reversal_patch(rec)
        assert np.array_equal(eng.canvas, eng.pristine)

    def test_reversal_plan_empty_session(self):
        eng = make_engine()
        eng.on_control(ControlSignal("mounted", 0))
        eng.on_control(ControlSignal("unmounted", 10))
        assert list(reversal_plan(eng)) == []

    def test_reversal_plan_single_cycle_frames(self):
        eng = make_engine()
        eng.on_control(ControlSignal("mounted", 0))
        eng.run_cycle(dwell_samples(150, 100))
        eng.on_control(ControlSignal("unmounted", 1000))
        plans = list(reversal_plan(eng))
        assert len(plans) == 1
        rec = eng.record.cycles[0]
        assert np.array_equal(plans[0].frames[0], rec.post_patch)
        assert np.array_equal(plans[0].frames[-1], rec.pre_patch)

    def test_random_multi_cycle_sessions_restore_exactly(self, rng):
        for trial in range(5):
            eng = make_engine(320, 240, n_frames=2)
            eng.on_control(ControlSignal("mounted", 0))
            n_cycles = int(rng.integers(1, 6))
            produced = 0
            for _ in range(n_cycles):
                if eng.run_cycle(wander_samples(rng, 320, 240)) is not None:
                    produced += 1
            eng.on_control(ControlSignal("unmounted", 99_999))
            for rec, _seq in eng.reversal_sequences():
                eng.apply_reversal_patch(rec)
            eng.complete_reversal()
            assert eng.phase == SessionPhase.ARCHIVING
            assert eng.canvas_hash() == SessionEngine(
                pristine=eng.pristine, timing=eng.timing, stroke=eng.stroke,
                backend=eng.backend, registry=eng.registry,
            ).canvas_hash(), f"trial {trial}: canvas not pristine after {produced} cycles"

    def test_replayability_same_trace_same_record_hash(self, rng):
        traces = [wander_samples(rng, 300, 200) for _ in range(3)]
        hashes = []
        for _ in range(2):
            eng = make_engine()
            eng.on_control(ControlSignal("mounted", 0))
            for tr in traces:
                eng.run_cycle(tr)
            hashes.append(eng.record.record_hash())
        assert hashes[0] == hashes[1]


class TestArchive:
    def run_small_session(self, tmp_path, cycles=3, keep_masks=False):
        eng = make_engine(keep_masks=keep_masks)
        eng.on_control(ControlSignal("mounted", 0))
        for i in range(cycles):
            assert eng.run_cycle(dwell_samples(60 + 40 * i, 80, start_ms=1000 * i)) is not None
        eng.on_control(ControlSignal("unmounted", 10_000))
        for rec, _ in eng.reversal_sequences():
            eng.apply_reversal_patch(rec)
        eng.complete_reversal()
        return eng, archive(eng, tmp_path / "archive")

    def test_empty_session_archives_pristine(self, tmp_path):
        eng = make_engine()
        eng.on_control(ControlSignal("mounted", 0))
        eng.on_control(ControlSignal("unmounted", 10))
        eng.complete_reversal()
        manifest_path = archive(eng, tmp_path / "archive")
        manifest = json.loads(manifest_path.read_text())
        assert manifest["cycles"] == []
        assert eng.phase == SessionPhase.IDLE
        from morphcanvas import imgio

        final = imgio.decode_png_rgb((manifest_path.parent / "final.png").read_bytes())
        assert np.array_equal(final, eng.pristine)

    def test_three_cycle_archive_layout(self, tmp_path):
        eng, manifest_path = self.run_small_session(tmp_path, cycles=3)
        session_dir = manifest_path.parent
        names = sorted(p.name for p in session_dir.iterdir())
        assert names == [
            "cycle_0_post.png", "cycle_0_pre.png",
            "cycle_1_post.png", "cycle_1_pre.png",
            "cycle_2_post.png", "cycle_2_pre.png",
            "final.png", "manifest.json",
        ]
        manifest = json.loads(manifest_path.read_text())
        assert [c["index"] for c in manifest["cycles"]] == [0, 1, 2]
        refs = {c["pre"] for c in manifest["cycles"]} | {c["post"] for c in manifest["cycles"]}
        assert len(refs) == 6

    def test_rearchive_gets_distinct_directory(self, tmp_path):
        eng1, path1 = self.run_small_session(tmp_path, cycles=1)
        eng2, path2 = self.run_small_session(tmp_path, cycles=1)
        assert path1 != path2
        assert path1.exists() and path2.exists()

    def test_masks_archived_when_kept(self, tmp_path):
        eng, manifest_path = self.run_small_session(tmp_path, cycles=1, keep_masks=True)
        manifest = json.loads(manifest_path.read_text())
        assert manifest["cycles"][0]["mask"] == "cycle_0_mask.png"
        assert (manifest_path.parent / "cycle_0_mask.png").exists()

    def test_forced_archive_keeps_distorted_canvas(self, tmp_path):
        eng = make_engine()
        eng.on_control(ControlSignal("mounted", 0))
        eng.run_cycle(dwell_samples(150, 100))
        eng.force_archive_phase()
        manifest_path = archive(eng, tmp_path / "archive")
        from morphcanvas import imgio

        final = imgio.decode_png_rgb((manifest_path.parent / "final.png").read_bytes())
        assert not np.array_equal(final, eng.pristine)
