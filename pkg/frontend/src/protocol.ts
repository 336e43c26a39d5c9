// Wire protocol mirror of the server: JSON lines for the control plane,
// a 36-byte binary envelope ("MCV1" magic, little-endian fields) for
// frame patches carrying PNG payloads.

export const HEADER_SIZE = 36;

export interface FramePatch {
  seqNo: number;
  x0: number;
  y0: number;
  width: number;
  height: number;
  presentAtMs: number;
  payload: Uint8Array;
}

export type CaptionMsg = { t: "v"; text: string; cycle: number };
export type ControlKind = "mounted" | "unmounted";

export class MalformedMessage extends Error {}

export function decodeEnvelope(data: ArrayBuffer | Uint8Array): FramePatch {
  const bytes = data instanceof Uint8Array ? data : new Uint8Array(data);
  if (bytes.length < HEADER_SIZE) throw new MalformedMessage("truncated envelope header");
  if (bytes[0] !== 0x4d || bytes[1] !== 0x43 || bytes[2] !== 0x56 || bytes[3] !== 0x31) {
    throw new MalformedMessage("bad magic");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const seqNo = view.getUint32(4, true);
  const x0 = view.getUint32(8, true);
  const y0 = view.getUint32(12, true);
  const width = view.getUint32(16, true);
  const height = view.getUint32(20, true);
  const presentAtMs = Number(view.getBigUint64(24, true));
  const length = view.getUint32(32, true);
  if (bytes.length !== HEADER_SIZE + length) {
    throw new MalformedMessage(`envelope declares ${length} payload bytes, got ${bytes.length - HEADER_SIZE}`);
  }
  if (width === 0 || height === 0) throw new MalformedMessage("empty region");
  return { seqNo, x0, y0, width, height, presentAtMs, payload: bytes.subarray(HEADER_SIZE) };
}

export function parseCaption(text: string): CaptionMsg | null {
  try {
    const obj = JSON.parse(text);
    if (obj && obj.t === "v" && typeof obj.text === "string" && typeof obj.cycle === "number") {
      return obj as CaptionMsg;
    }
  } catch {
    // fall through
  }
  return null;
}

export function encodeGaze(tsMs: number, x: number, y: number): string {
  return JSON.stringify({ t: "g", ts: Math.max(0, Math.round(tsMs)), x, y });
}

export function encodeControl(kind: ControlKind, tsMs: number): string {
  return JSON.stringify({ t: "c", k: kind, ts: Math.max(0, Math.round(tsMs)) });
}

export const KEYFRAME_REQUEST = '{"t":"k"}';
