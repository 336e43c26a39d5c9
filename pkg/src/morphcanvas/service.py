"""HTTP/WebSocket/TCP service wrapping the pipeline runtime.

Bindings:
  * WS  /ws/gaze          gaze samples + control signals (JSON lines in)
  * WS  /ws/view?role=    frame envelopes (binary) + captions (text) out,
                          keyframe requests in
  * TCP gaze_listen        same inbound protocol, newline-delimited
  * TCP view_listen        same outbound stream over a raw socket
  * GET /metrics           plain-text counters
  * GET /healthz, /session, /canvas.png, POST /control

A full-canvas keyframe envelope is broadcast when a viewer connects,
when one asks for it, and every keyframe_refresh_ms while viewers are
connected, so late joiners converge without replaying history.
"""

from __future__ import annotations

import asyncio
import contextlib
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, Query, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse, RedirectResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import imgio
from .bootstrap import build_live_runtime
from .config import Config, parse_listen
from .pipeline import PipelineRuntime
from .protocol import (
    ControlSignal,
    GazeSample,
    KeyframeRequest,
    MalformedMessage,
    decode_message,
)
from .stream import BufferedSink, build_envelope

FRONTEND_DIST = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"


class HealthResponse(BaseModel):
    status: str
    phase: str


class SessionInfo(BaseModel):
    phase: str
    session_id: str
    cycle_count: int
    canvas_hash: str
    canvas_width: int
    canvas_height: int


class ControlRequest(BaseModel):
    kind: Literal["mounted", "unmounted"]


class ControlResponse(BaseModel):
    accepted: bool
    phase: str


KEYFRAME_MIN_GAP_MS = 200.0


def emit_keyframe(runtime: PipelineRuntime, png_level: int = 1, min_gap_ms: float = 0.0) -> None:
    """Broadcast the current canvas as a full-frame envelope.

    ``min_gap_ms`` rate-limits request storms; the encode is heavy enough
    that callers on the event loop must run this in a thread.
    """
    now = runtime.clock.now_ms()
    last = runtime._last_keyframe_ms
    if min_gap_ms > 0 and last is not None and now - last < min_gap_ms:
        return
    runtime._last_keyframe_ms = now
    canvas = runtime.engine.canvas_snapshot()
    png = imgio.encode_png(canvas, png_level)
    env = build_envelope(
        0, 0, runtime.engine.canvas_w, runtime.engine.canvas_h,
        round(runtime.clock.now_ms()), png,
    )
    runtime.channels.emit_frame(env, keyframe=True)


def _handle_inbound(runtime: PipelineRuntime, data: bytes, conn_state: dict) -> None:
    """One inbound client message: gaze, control, or keyframe request.

    Runs on the event loop; keyframe encodes are pushed to a worker thread.
    """
    try:
        msg = decode_message(data)
    except MalformedMessage:
        runtime.metrics.inc("malformed_messages")
        return
    if isinstance(msg, GazeSample):
        last = conn_state.get("last_ts", -1)
        if msg.ts_ms < last:
            runtime.metrics.inc("gaze_client_ts_violations")
        conn_state["last_ts"] = max(last, msg.ts_ms)
        runtime.ingest_gaze(msg)
    elif isinstance(msg, ControlSignal):
        runtime.submit_control(msg)
    elif isinstance(msg, KeyframeRequest):
        asyncio.get_running_loop().run_in_executor(
            None, emit_keyframe, runtime, 1, KEYFRAME_MIN_GAP_MS
        )
    else:
        runtime.metrics.inc("malformed_messages")


def create_app(cfg: Config | None = None, runtime: PipelineRuntime | None = None) -> FastAPI:
    cfg = cfg or Config().validate()
    app = FastAPI(title="morphcanvas", version="0.1.0")
    app.state.config = cfg
    app.state.runtime = runtime
    app.state.tcp_servers = []

    async def _start_tcp(rt: PipelineRuntime) -> None:
        gaze_host, gaze_port = parse_listen(cfg.gaze_listen, "gaze_listen")
        view_host, view_port = parse_listen(cfg.view_listen, "view_listen")

        async def handle_gaze(reader, writer):
            state: dict = {}
            try:
                while True:
                    line = await reader.readline()
                    if not line:
                        break
                    _handle_inbound(rt, line.rstrip(b"\n"), state)
            except (ConnectionError, asyncio.IncompleteReadError):
                pass
            finally:
                writer.close()

        async def handle_view(reader, writer):
            loop = asyncio.get_running_loop()
            wakeup = asyncio.Event()
            sink = BufferedSink(maxlen=256, on_data=lambda: loop.call_soon_threadsafe(wakeup.set))
            rt.channels.add_bystander(sink)
            rt.channels.add_caption_sink(sink)
            await asyncio.to_thread(emit_keyframe, rt)
            inbound_state: dict = {}

            async def read_requests():
                while True:
                    line = await reader.readline()
                    if not line:
                        return
                    _handle_inbound(rt, line.rstrip(b"\n"), inbound_state)

            reader_task = asyncio.create_task(read_requests())
            try:
                while not reader_task.done():
                    with contextlib.suppress(asyncio.TimeoutError):
                        await asyncio.wait_for(wakeup.wait(), timeout=0.25)
                    wakeup.clear()
                    for item in sink.drain():
                        writer.write(item)
                    await writer.drain()
            except (ConnectionError, asyncio.CancelledError):
                pass
            finally:
                reader_task.cancel()
                rt.channels.remove_sink(sink)
                sink.close()
                writer.close()

        gaze_server = await asyncio.start_server(handle_gaze, gaze_host, gaze_port)
        view_server = await asyncio.start_server(handle_view, view_host, view_port)
        app.state.tcp_servers = [gaze_server, view_server]
        app.state.gaze_port = gaze_server.sockets[0].getsockname()[1]
        app.state.view_port = view_server.sockets[0].getsockname()[1]

    async def _keyframe_refresher(rt: PipelineRuntime) -> None:
        if cfg.keyframe_refresh_ms <= 0:
            return
        while True:
            await asyncio.sleep(cfg.keyframe_refresh_ms / 1000.0)
            if rt.channels.has_frame_sinks():
                await asyncio.to_thread(emit_keyframe, rt)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        rt = app.state.runtime
        if rt is None:
            pristine = imgio.load_canvas(cfg.canvas)
            rt = build_live_runtime(cfg, pristine)
            app.state.runtime = rt
        rt.start()
        await _start_tcp(rt)
        refresher = asyncio.create_task(_keyframe_refresher(rt))
        try:
            yield
        finally:
            refresher.cancel()
            for server in app.state.tcp_servers:
                server.close()
                await server.wait_closed()
            rt.stop()

    app.router.lifespan_context = lifespan

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        rt: PipelineRuntime = app.state.runtime
        return HealthResponse(status="ok", phase=rt.engine.phase.value)

    @app.get("/metrics", response_class=PlainTextResponse)
    def metrics():
        rt: PipelineRuntime = app.state.runtime
        return rt.metrics_text()

    @app.get("/session", response_model=SessionInfo)
    def session_info():
        rt: PipelineRuntime = app.state.runtime
        return SessionInfo(
            phase=rt.engine.phase.value,
            session_id=rt.engine.record.session_id,
            cycle_count=len(rt.engine.record.cycles),
            canvas_hash=rt.engine.canvas_hash(),
            canvas_width=rt.engine.canvas_w,
            canvas_height=rt.engine.canvas_h,
        )

    @app.post("/control", response_model=ControlResponse)
    def control(req: ControlRequest):
        rt: PipelineRuntime = app.state.runtime
        signal = ControlSignal(kind=req.kind, ts_ms=max(round(rt.clock.now_ms()), 0))
        signal.validate()
        rt.submit_control(signal)
        return ControlResponse(accepted=True, phase=rt.engine.phase.value)

    @app.get("/canvas.png")
    def canvas_png():
        rt: PipelineRuntime = app.state.runtime
        return Response(content=imgio.encode_png(rt.engine.canvas_snapshot(), 1),
                        media_type="image/png")

    @app.websocket("/ws/gaze")
    async def ws_gaze(ws: WebSocket):
        rt: PipelineRuntime = app.state.runtime
        await ws.accept()
        state: dict = {}
        try:
            while True:
                text = await ws.receive_text()
                _handle_inbound(rt, text.encode("utf-8"), state)
        except WebSocketDisconnect:
            pass

    @app.websocket("/ws/view")
    async def ws_view(ws: WebSocket, role: str = Query(default="bystander")):
        rt: PipelineRuntime = app.state.runtime
        await ws.accept()
        loop = asyncio.get_running_loop()
        wakeup = asyncio.Event()
        sink = BufferedSink(maxlen=256, on_data=lambda: loop.call_soon_threadsafe(wakeup.set))
        if role == "immersant":
            rt.channels.set_immersant(sink)
        else:
            rt.channels.add_bystander(sink)
        rt.channels.add_caption_sink(sink)
        await asyncio.to_thread(emit_keyframe, rt)
        inbound_state: dict = {}

        async def read_requests():
            while True:
                message = await ws.receive()
                if message.get("type") == "websocket.disconnect":
                    return
                text = message.get("text")
                data = text.encode("utf-8") if text is not None else message.get("bytes", b"")
                _handle_inbound(rt, data, inbound_state)

        reader_task = asyncio.create_task(read_requests())
        try:
            while not reader_task.done():
                with contextlib.suppress(asyncio.TimeoutError):
                    await asyncio.wait_for(wakeup.wait(), timeout=0.25)
                wakeup.clear()
                for item in sink.drain():
                    if item[:1] == b"{":
                        await ws.send_text(item.decode("utf-8"))
                    else:
                        await ws.send_bytes(item)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            reader_task.cancel()
            rt.channels.remove_sink(sink)
            sink.close()

    if FRONTEND_DIST.is_dir():
        app.mount("/ui", StaticFiles(directory=FRONTEND_DIST, html=True), name="ui")

        @app.get("/", include_in_schema=False)
        def index():
            return RedirectResponse("/ui/")

    return app
