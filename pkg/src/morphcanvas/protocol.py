"""Wire protocol shared by gaze sources, viewer clients and the server.

Two encodings, both carried over ordered stream transports (TCP and
WebSocket):

  * control plane: single-line JSON objects terminated by ``\\n`` with a
    one-character discriminator field ``"t"``:
        "g" gaze sample      {"t":"g","ts":..,"x":..,"y":..}
        "c" control signal   {"t":"c","k":"mounted"|"unmounted","ts":..}
        "v" caption event    {"t":"v","text":..,"cycle":..}
        "k" keyframe request {"t":"k"}
    "p" is reserved for frame patches, which never travel as JSON.

  * frame patches: binary envelope
        magic "MCV1" | u32 seq_no | u32 x0 | u32 y0 | u32 width |
        u32 height | u64 present_at_ms | u32 payload_len | PNG payload
    all integers little-endian; header is exactly 36 bytes.

Everything here is a pure, thread-safe codec. Decoding rejects malformed
input with :class:`MalformedMessage` and never raises anything else.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from hashlib import sha1

from . import imgio

MAGIC = b"MCV1"
_HEADER = struct.Struct("<4s5IQI")
HEADER_SIZE = _HEADER.size  # 36

_U32_MAX = 2**32 - 1
_U64_MAX = 2**64 - 1

MOUNTED = "mounted"
UNMOUNTED = "unmounted"


class MalformedMessage(ValueError):
    """Raised when bytes cannot be decoded into a valid message."""


class BackendUnreachable(ConnectionError):
    """The remote synthesis endpoint could not be reached."""


class BackendBadResponse(ValueError):
    """The remote synthesis endpoint violated its response contract."""


@dataclass(frozen=True)
class GazeSample:
    """One normalized gaze point; timestamps are client-relative ms."""

    ts_ms: int
    x: float
    y: float

    def validate(self) -> None:
        if not isinstance(self.ts_ms, int) or isinstance(self.ts_ms, bool):
            raise MalformedMessage("gaze ts_ms must be an integer")
        if self.ts_ms < 0:
            raise MalformedMessage("gaze ts_ms must be non-negative")
        if not (0.0 <= self.x <= 1.0) or not (0.0 <= self.y <= 1.0):
            raise MalformedMessage("gaze coordinates must lie in [0, 1]")


@dataclass(frozen=True)
class ControlSignal:
    """Headset mount state change."""

    kind: str  # MOUNTED or UNMOUNTED
    ts_ms: int

    def validate(self) -> None:
        if self.kind not in (MOUNTED, UNMOUNTED):
            raise MalformedMessage(f"unknown control kind {self.kind!r}")
        if not isinstance(self.ts_ms, int) or isinstance(self.ts_ms, bool):
            raise MalformedMessage("control ts_ms must be an integer")
        if self.ts_ms < 0:
            raise MalformedMessage("control ts_ms must be non-negative")


@dataclass(frozen=True)
class CaptionEvent:
    """Prompt sentence voiced over while its cycle plays."""

    text: str
    cycle_index: int

    def validate(self) -> None:
        if not isinstance(self.text, str) or not self.text:
            raise MalformedMessage("caption text must be non-empty")
        if not isinstance(self.cycle_index, int) or isinstance(self.cycle_index, bool):
            raise MalformedMessage("caption cycle_index must be an integer")
        if self.cycle_index < 0:
            raise MalformedMessage("caption cycle_index must be non-negative")


@dataclass(frozen=True)
class KeyframeRequest:
    """Viewer asks for a fresh full-canvas keyframe (gap recovery)."""

    def validate(self) -> None:
        pass


@dataclass(frozen=True)
class FramePatch:
    """One paced frame covering a crop region of the canvas.

    ``payload`` is a PNG that must decode to exactly width x height pixels.
    """

    seq_no: int
    x0: int
    y0: int
    width: int
    height: int
    present_at_ms: int
    payload: bytes

    def validate(self) -> None:
        for name in ("seq_no", "x0", "y0", "width", "height"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or not (0 <= v <= _U32_MAX):
                raise MalformedMessage(f"patch {name} out of u32 range")
        if self.width == 0 or self.height == 0:
            raise MalformedMessage("patch region must be non-empty")
        if not isinstance(self.present_at_ms, int) or not (0 <= self.present_at_ms <= _U64_MAX):
            raise MalformedMessage("patch present_at_ms out of u64 range")
        try:
            w, h = imgio.png_dimensions(self.payload)
        except ValueError as exc:
            raise MalformedMessage(f"patch payload is not a PNG: {exc}") from None
        if (w, h) != (self.width, self.height):
            raise MalformedMessage(
                f"payload is {w}x{h} but region declares {self.width}x{self.height}"
            )


Message = GazeSample | ControlSignal | CaptionEvent | KeyframeRequest | FramePatch


def encode_message(msg: Message) -> bytes:
    """Serialize a message; JSON line for text kinds, envelope for patches."""
    msg.validate()
    if isinstance(msg, GazeSample):
        line = {"t": "g", "ts": msg.ts_ms, "x": msg.x, "y": msg.y}
    elif isinstance(msg, ControlSignal):
        line = {"t": "c", "k": msg.kind, "ts": msg.ts_ms}
    elif isinstance(msg, CaptionEvent):
        line = {"t": "v", "text": msg.text, "cycle": msg.cycle_index}
    elif isinstance(msg, KeyframeRequest):
        line = {"t": "k"}
    elif isinstance(msg, FramePatch):
        header = _HEADER.pack(
            MAGIC, msg.seq_no, msg.x0, msg.y0, msg.width, msg.height,
            msg.present_at_ms, len(msg.payload),
        )
        return header + msg.payload
    else:
        raise TypeError(f"not a protocol message: {type(msg).__name__}")
    return json.dumps(line, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_message(data: bytes) -> Message:
    """Decode one complete message; raises MalformedMessage, nothing else."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise MalformedMessage("decode_message expects bytes")
    data = bytes(data)
    if data[:4] == MAGIC:
        return _decode_patch(data)
    return _decode_json_line(data)


def _decode_patch(data: bytes) -> FramePatch:
    if len(data) < HEADER_SIZE:
        raise MalformedMessage("truncated frame envelope header")
    _, seq_no, x0, y0, width, height, present_at, length = _HEADER.unpack_from(data)
    if len(data) != HEADER_SIZE + length:
        raise MalformedMessage(
            f"envelope declares {length} payload bytes, got {len(data) - HEADER_SIZE}"
        )
    patch = FramePatch(
        seq_no=seq_no, x0=x0, y0=y0, width=width, height=height,
        present_at_ms=present_at, payload=data[HEADER_SIZE:],
    )
    patch.validate()
    return patch


def _decode_json_line(data: bytes) -> Message:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedMessage("message is not valid UTF-8") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        raise MalformedMessage("message is not valid JSON") from None
    if not isinstance(obj, dict):
        raise MalformedMessage("JSON message must be an object")
    tag = obj.get("t")
    try:
        if tag == "g":
            msg: Message = GazeSample(
                ts_ms=_require_int(obj, "ts"),
                x=_require_num(obj, "x"),
                y=_require_num(obj, "y"),
            )
        elif tag == "c":
            msg = ControlSignal(kind=_require_str(obj, "k"), ts_ms=_require_int(obj, "ts"))
        elif tag == "v":
            msg = CaptionEvent(text=_require_str(obj, "text"), cycle_index=_require_int(obj, "cycle"))
        elif tag == "k":
            msg = KeyframeRequest()
        else:
            raise MalformedMessage(f"unknown discriminator {tag!r}")
    except MalformedMessage:
        raise
    except Exception as exc:  # pragma: no cover - guard for odd JSON shapes
        raise MalformedMessage(str(exc)) from None
    msg.validate()
    return msg


def _require_int(obj: dict, key: str) -> int:
    v = obj.get(key)
    if not isinstance(v, int) or isinstance(v, bool):
        raise MalformedMessage(f"field {key!r} must be an integer")
    return v


def _require_num(obj: dict, key: str) -> float:
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MalformedMessage(f"field {key!r} must be a number")
    return float(v)


def _require_str(obj: dict, key: str) -> str:
    v = obj.get(key)
    if not isinstance(v, str):
        raise MalformedMessage(f"field {key!r} must be a string")
    return v


# --- remote synthesis wire format -----------------------------------------

INPAINT_PATH = "/inpaint"


def build_synth_request(crop_png: bytes, mask_png: bytes, prompt_id: int, seed: int):
    """Multipart POST body for the remote inpainting endpoint.

    Parts: "crop" (PNG), "mask" (PNG), "prompt_id" (decimal text),
    "seed" (decimal text). Returns (content_type, body). The boundary is
    derived from the content so identical requests are byte-identical.
    """
    cw, ch = imgio.png_dimensions(crop_png)
    mw, mh = imgio.png_dimensions(mask_png)
    if (cw, ch) != (mw, mh):
        raise ValueError(f"crop is {cw}x{ch} but mask is {mw}x{mh}")
    parts = [
        ("crop", "crop.png", "image/png", crop_png),
        ("mask", "mask.png", "image/png", mask_png),
        ("prompt_id", None, "text/plain", str(int(prompt_id)).encode()),
        ("seed", None, "text/plain", str(int(seed)).encode()),
    ]
    digest = sha1(b"".join(p[3] for p in parts)).hexdigest()[:20]
    boundary = f"mcv1-{digest}"
    while any(boundary.encode() in p[3] for p in parts):  # vanishingly rare
        boundary += "x"
    chunks = []
    for name, filename, ctype, body in parts:
        disp = f'form-data; name="{name}"'
        if filename:
            disp += f'; filename="{filename}"'
        chunks.append(
            f"--{boundary}\r\nContent-Disposition: {disp}\r\n"
            f"Content-Type: {ctype}\r\n\r\n".encode() + body + b"\r\n"
        )
    chunks.append(f"--{boundary}--\r\n".encode())
    return f"multipart/form-data; boundary={boundary}", b"".join(chunks)
