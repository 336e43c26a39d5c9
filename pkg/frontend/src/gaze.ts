// Pointer-as-gaze streaming: a fixed 75 Hz tick samples and holds the
// latest pointer position, normalized to [0,1]^2, and sends it while the
// viewer is "mounted". Connection loss reconnects with backoff and
// re-sends the mount state so the server session survives a blip.

import { RateMeter } from "./meters.js";
import { encodeControl, encodeGaze } from "./protocol.js";

export interface GazeSocket {
  send(line: string): void;
  readonly open: boolean;
}

export class GazeStreamer {
  mounted = false;
  readonly sendMeter: RateMeter;
  private pointer: { x: number; y: number } | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;
  private epoch: number;

  constructor(
    private socket: GazeSocket,
    private hz = 75,
    private now: () => number = () => performance.now(),
  ) {
    this.epoch = this.now();
    this.sendMeter = new RateMeter(2000, this.now);
  }

  setPointer(x: number, y: number): void {
    this.pointer = { x: clamp01(x), y: clamp01(y) };
  }

  setMounted(mounted: boolean): void {
    if (mounted === this.mounted) return;
    this.mounted = mounted;
    // the epoch is connection-lifetime, not per mount: ts_ms must never
    // run backwards within one connection
    this.sendControl();
  }

  sendControl(): void {
    if (!this.socket.open) return;
    this.socket.send(encodeControl(this.mounted ? "mounted" : "unmounted", this.now() - this.epoch));
  }

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => this.tick(), 1000 / this.hz);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  tick(): void {
    if (!this.mounted || this.pointer === null || !this.socket.open) return;
    this.socket.send(encodeGaze(this.now() - this.epoch, this.pointer.x, this.pointer.y));
    this.sendMeter.note();
  }
}

function clamp01(v: number): number {
  return v < 0 ? 0 : v > 1 ? 1 : v;
}

export class ReconnectingSocket implements GazeSocket {
  private ws: WebSocket | null = null;
  private backoffMs = 250;
  private closed = false;
  onopen: (() => void) | null = null;
  onmessage: ((data: string | ArrayBuffer) => void) | null = null;

  constructor(private url: string) {
    this.connect();
  }

  get open(): boolean {
    return this.ws !== null && this.ws.readyState === WebSocket.OPEN;
  }

  send(line: string): void {
    if (this.open) this.ws!.send(line);
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }

  private connect(): void {
    if (this.closed) return;
    const ws = new WebSocket(this.url);
    ws.binaryType = "arraybuffer";
    this.ws = ws;
    ws.onopen = () => {
      this.backoffMs = 250;
      this.onopen?.();
    };
    ws.onmessage = (ev) => this.onmessage?.(ev.data);
    ws.onclose = () => {
      if (this.closed) return;
      setTimeout(() => this.connect(), this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, 5000);
    };
    ws.onerror = () => ws.close();
  }
}
