"""Generate deterministic wire-format fixtures for the frontend tests.

Runs a scripted 5-cycle session plus reversal through the real engine and
scheduler, captures every emitted envelope and caption, and records the
server canvas hashes the client composite must reproduce.

Usage: python tools/gen_ui_fixtures.py [outdir]
"""

import base64
import json
import sys
from pathlib import Path

import numpy as np

from morphcanvas.gaze import StrokeParams, WindowSample
from morphcanvas.interpolate import TimingModel
from morphcanvas.protocol import ControlSignal, GazeSample, encode_message
from morphcanvas.session import SessionEngine
from morphcanvas.stream import ChannelSet, CollectorSink, FrameScheduler, Metrics, VirtualClock
from morphcanvas.synthesis import MockInpaintBackend, PromptRegistry
from morphcanvas.synthetic import make_canvas

CANVAS_W, CANVAS_H = 320, 220
N_FRAMES = 4
CYCLES = 5


def dwell(cx, cy, start_ms, count=10, step=9, seed=0):
    rng = np.random.default_rng(seed)
    t = start_ms
    out = []
    x, y = cx, cy
    for _ in range(count):
        t += 13
        x = int(np.clip(x + rng.integers(-step, step + 1), 0, CANVAS_W - 1))
        y = int(np.clip(y + rng.integers(-step, step + 1), 0, CANVAS_H - 1))
        out.append(WindowSample(t, x, y))
    return out


def main(outdir: str) -> None:
    pristine = make_canvas(CANVAS_W, CANVAS_H, seed=9)
    engine = SessionEngine(
        pristine=pristine,
        timing=TimingModel(delta_t_ms=1000, n_frames=N_FRAMES),
        stroke=StrokeParams(),
        backend=MockInpaintBackend(simulated_latency_ms=0),
        registry=PromptRegistry.default(),
        session_id="ui-fixture",
    )
    clock = VirtualClock()
    metrics = Metrics()
    channels = ChannelSet(metrics)
    sink = CollectorSink(clock)
    channels.set_immersant(sink)
    channels.add_caption_sink(sink)
    scheduler = FrameScheduler(channels, metrics, clock, png_level=6, enqueue=False)

    messages = []

    def emit_scheduled(scheduled, caption, cycle_index):
        for i, env in enumerate(scheduled.envelopes):
            if i == 0 and caption:
                from morphcanvas.protocol import CaptionEvent

                messages.append({
                    "kind": "caption",
                    "text": encode_message(CaptionEvent(caption, cycle_index)).decode().strip(),
                })
            data = channels.emit_frame(env)
            messages.append({"kind": "frame", "b64": base64.b64encode(data).decode()})

    # connect keyframe
    from morphcanvas import imgio
    from morphcanvas.stream import build_envelope

    key_png = imgio.encode_png(engine.canvas_snapshot(), 6)
    key_env = build_envelope(0, 0, CANVAS_W, CANVAS_H, 0, key_png)
    messages.append({"kind": "frame", "b64": base64.b64encode(channels.emit_frame(key_env, keyframe=True)).decode()})

    engine.on_control(ControlSignal("mounted", 0))
    spots = [(80, 70), (200, 120), (140, 170), (250, 60), (60, 160)]
    for c, (cx, cy) in enumerate(spots):
        seq = engine.run_cycle(dwell(cx, cy, c * 1000, seed=c), window_open_ms=c * 1000)
        assert seq is not None, f"cycle {c} produced no sequence"
        clock.sleep_until(1000 * (c + 1))
        emit_scheduled(scheduler.schedule(seq), seq.caption, seq.cycle_index)
    after_forward_hash = engine.canvas_hash()

    engine.on_control(ControlSignal("unmounted", 6000))
    for rec, seq in engine.reversal_sequences():
        emit_scheduled(scheduler.schedule(seq), None, rec.cycle_index)
        engine.apply_reversal_patch(rec)
    final_hash = engine.canvas_hash()
    pristine_hash = __import__("hashlib").sha256(pristine.tobytes()).hexdigest()
    assert final_hash == pristine_hash

    fixture = {
        "canvas": {"width": CANVAS_W, "height": CANVAS_H},
        "cycles": CYCLES,
        "frames_per_sequence": N_FRAMES + 2,
        "after_forward_hash": after_forward_hash,
        "final_hash": final_hash,
        "messages": messages,
    }
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "session.json").write_text(json.dumps(fixture) + "\n")

    # protocol conformance vectors: canonical encodings from this implementation
    from morphcanvas.protocol import CaptionEvent, FramePatch

    tiny = imgio.encode_png(np.full((2, 3, 3), 200, dtype=np.uint8))
    patch = FramePatch(seq_no=9, x0=11, y0=22, width=3, height=2,
                       present_at_ms=123456789, payload=tiny)
    vectors = {
        "gaze_line": encode_message(GazeSample(1500, 0.25, 0.75)).decode(),
        "control_line": encode_message(ControlSignal("unmounted", 9000)).decode(),
        "caption_line": encode_message(CaptionEvent("smog settles over the valley", 3)).decode(),
        "envelope_b64": base64.b64encode(encode_message(patch)).decode(),
        "envelope_fields": {"seq_no": 9, "x0": 11, "y0": 22, "width": 3, "height": 2,
                            "present_at_ms": 123456789, "payload_len": len(tiny)},
    }
    (out / "protocol.json").write_text(json.dumps(vectors) + "\n")
    print(f"wrote {out}/session.json ({len(messages)} messages) and {out}/protocol.json")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "frontend/tests/fixtures")
