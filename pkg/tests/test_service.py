"""HTTP, WebSocket, and raw TCP surfaces of the service."""

import json
import socket
import time

import numpy as np
import pytest
from starlette.testclient import TestClient

from conftest import make_test_canvas
from morphcanvas import imgio
from morphcanvas.bootstrap import build_engine, build_plan
from morphcanvas.config import Config
from morphcanvas.pipeline import PipelineRuntime
from morphcanvas.protocol import HEADER_SIZE, decode_message, encode_message, GazeSample, ControlSignal
from morphcanvas.service import create_app


@pytest.fixture
def service():
    cfg = Config(
        canvas="unused.png",
        delta_t_ms=500,
        n_frames=6,
        sim_inpaint_ms=40,
        sim_interp_ms=20,
        schedule_margin_ms=120,
        empty_retry_ms=100,
        gaze_listen="127.0.0.1:0",
        view_listen="127.0.0.1:0",
        keyframe_refresh_ms=0,
        archive_dir="",
    ).validate()
    pristine = make_test_canvas(320, 240)
    runtime = PipelineRuntime(
        engine=build_engine(cfg, pristine, "svc-test"),
        plan=build_plan(cfg),
        archive_dir=None,
        png_level=0,
    )
    app = create_app(cfg, runtime)
    with TestClient(app) as client:
        yield client, runtime


def wait_until(predicate, timeout_s=5.0, interval_s=0.02):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval_s)
    return False


class TestHttp:
    def test_healthz(self, service):
        client, _ = service
        body = client.get("/healthz").json()
        assert body == {"status": "ok", "phase": "idle"}

    def test_metrics_text(self, service):
        client, _ = service
        resp = client.get("/metrics")
        assert resp.status_code == 200
        text = resp.text
        for key in ("frames_emitted", "underflows", "bystander_drops", "cycle_count",
                    "canvas_hash", "phase idle"):
            assert key in text

    def test_session_info(self, service):
        client, runtime = service
        body = client.get("/session").json()
        assert body["phase"] == "idle"
        assert body["canvas_width"] == 320 and body["canvas_height"] == 240
        assert body["canvas_hash"] == runtime.engine.canvas_hash()

    def test_canvas_png(self, service):
        client, runtime = service
        resp = client.get("/canvas.png")
        img = imgio.decode_png_rgb(resp.content)
        assert img.shape == (240, 320, 3)
        assert np.array_equal(img, runtime.engine.canvas_snapshot())

    def test_control_round_trip(self, service):
        client, runtime = service
        assert client.post("/control", json={"kind": "mounted"}).json()["accepted"]
        assert wait_until(lambda: runtime.engine.phase.value == "active")
        client.post("/control", json={"kind": "unmounted"})
        assert wait_until(lambda: runtime.engine.phase.value == "idle")

    def test_control_rejects_unknown_kind(self, service):
        client, _ = service
        resp = client.post("/control", json={"kind": "sideways"})
        assert resp.status_code == 422


class TestWebSocket:
    def test_gaze_ingest_counts(self, service):
        client, runtime = service
        with client.websocket_connect("/ws/gaze") as ws:
            for i in range(20):
                ws.send_text(encode_message(GazeSample(i * 13, 0.4, 0.5)).decode().strip())
            assert wait_until(lambda: runtime.metrics.get("gaze_samples_received") == 20)

    def test_malformed_line_does_not_kill_connection(self, service):
        client, runtime = service
        with client.websocket_connect("/ws/gaze") as ws:
            ws.send_text('{"t":"z"}')
            ws.send_text(encode_message(GazeSample(0, 0.5, 0.5)).decode().strip())
            assert wait_until(lambda: runtime.metrics.get("gaze_samples_received") >= 1)
            assert runtime.metrics.get("malformed_messages") == 1

    def test_view_receives_initial_keyframe(self, service):
        client, runtime = service
        with client.websocket_connect("/ws/view") as ws:
            data = ws.receive_bytes()
        patch = decode_message(data)
        assert (patch.x0, patch.y0) == (0, 0)
        assert (patch.width, patch.height) == (320, 240)
        decoded = imgio.decode_png_rgb(patch.payload)
        assert np.array_equal(decoded, runtime.engine.canvas_snapshot())

    def test_keyframe_request_yields_another_keyframe(self, service):
        client, runtime = service
        with client.websocket_connect("/ws/view") as ws:
            ws.receive_bytes()
            time.sleep(0.25)  # sit out the server-side request rate limit
            ws.send_text('{"t":"k"}')
            data = ws.receive_bytes()
        assert decode_message(data).width == 320
        assert runtime.metrics.get("keyframes_emitted") == 2


class TestTcp:
    def test_gaze_tcp_ingest(self, service):
        client, runtime = service
        port = client.app.state.gaze_port
        before = runtime.metrics.get("gaze_samples_received")
        with socket.create_connection(("127.0.0.1", port), timeout=5) as sock:
            for i in range(10):
                sock.sendall(encode_message(GazeSample(i * 13, 0.3, 0.3)))
        assert wait_until(lambda: runtime.metrics.get("gaze_samples_received") == before + 10)

    def test_view_tcp_streams_keyframe(self, service):
        client, runtime = service
        port = client.app.state.view_port
        with socket.create_connection(("127.0.0.1", port), timeout=5) as sock:
            sock.settimeout(5)
            header = b""
            while len(header) < HEADER_SIZE:
                header += sock.recv(HEADER_SIZE - len(header))
            length = int.from_bytes(header[32:36], "little")
            body = b""
            while len(body) < length:
                body += sock.recv(min(65536, length - len(body)))
        patch = decode_message(header + body)
        assert (patch.width, patch.height) == (320, 240)


class TestLiveSession:
    def test_full_live_cycle_and_reversal(self, service):
        client, runtime = service
        pristine_hash = runtime.engine.canvas_hash()
        with client.websocket_connect("/ws/view?role=immersant") as view:
            view.receive_bytes()  # initial keyframe
            with client.websocket_connect("/ws/gaze") as gaze:
                gaze.send_text('{"t":"c","k":"mounted","ts":0}')
                assert wait_until(lambda: runtime.engine.phase.value == "active")
                t0 = time.monotonic()
                i = 0
                while runtime.metrics.get("cycle_count") < 2 and time.monotonic() - t0 < 10:
                    ts = round((time.monotonic() - t0) * 1000)
                    x = 0.45 + 0.07 * np.sin(i / 9)
                    y = 0.5 + 0.07 * np.cos(i / 11)
                    gaze.send_text(f'{{"t":"g","ts":{ts},"x":{x:.4f},"y":{y:.4f}}}')
                    i += 1
                    time.sleep(0.013)
                assert runtime.metrics.get("cycle_count") >= 2
                assert runtime.engine.canvas_hash() != pristine_hash
                gaze.send_text(f'{{"t":"c","k":"unmounted","ts":{i * 13}}}')
            assert wait_until(lambda: runtime.engine.phase.value == "idle", timeout_s=30)
            assert runtime.engine.canvas_hash() == pristine_hash
            # the immersant stream carried morph frames plus captions; with
            # >= 2 forward and >= 2 reversal sequences at least 32 frames
            # and 2 captions are guaranteed to be in flight
            frames = 0
            captions = 0
            for _ in range(400):
                msg = view.receive()
                if msg.get("bytes") is not None:
                    frames += 1
                elif msg.get("text") is not None:
                    captions += 1
                if frames >= 20 and captions >= 2:
                    break
        assert frames >= 20
        assert captions >= 2
