// View-stream consumer: decodes envelopes, holds each frame until its
// presentation time (server clock offset estimated from the connect
// keyframe, which is stamped "now" on the server), applies it to the
// compositor, and keeps a caption log with a 4 s display window.

import { Compositor, PngDecoder } from "./compositor.js";
import { decodeEnvelope, parseCaption, KEYFRAME_REQUEST, MalformedMessage } from "./protocol.js";

export interface ViewEvents {
  onDraw?: () => void;
  onCaption?: (text: string, cycle: number) => void;
  requestSend?: (line: string) => void;
}

const CAPTION_WINDOW_MS = 4000;
const KEYFRAME_REQUEST_MIN_GAP_MS = 1000;

export class ViewClient {
  readonly compositor = new Compositor();
  captions: { text: string; cycle: number; shownAt: number }[] = [];
  framesPresented = 0;
  malformedFrames = 0;
  clockOffsetMs: number | null = null; // serverNow ~= clientNow + offset
  private lastKeyframeRequest = -Infinity;
  private chain: Promise<void> = Promise.resolve();

  constructor(
    private decode: PngDecoder,
    private events: ViewEvents = {},
    private now: () => number = () => performance.now(),
    private wait: (ms: number) => Promise<void> = (ms) =>
      new Promise((resolve) => setTimeout(resolve, ms)),
  ) {}

  handleBinary(data: ArrayBuffer | Uint8Array): void {
    let patch;
    try {
      patch = decodeEnvelope(data);
    } catch (err) {
      if (err instanceof MalformedMessage) {
        this.malformedFrames += 1;
        this.requestKeyframe();
        return;
      }
      throw err;
    }
    if (this.clockOffsetMs === null) {
      this.clockOffsetMs = patch.presentAtMs - this.now();
    }
    const offset = this.clockOffsetMs;
    // frames apply strictly in arrival order; each waits out its deadline
    this.chain = this.chain.then(async () => {
      const delay = patch.presentAtMs - (this.now() + offset);
      if (delay > 0) await this.wait(delay);
      await this.compositor.apply(patch, this.decode);
      if (this.compositor.needsKeyframe) this.requestKeyframe();
      this.framesPresented += 1;
      this.events.onDraw?.();
    });
  }

  handleText(text: string): void {
    const caption = parseCaption(text);
    if (caption === null) return;
    this.captions.push({ text: caption.text, cycle: caption.cycle, shownAt: this.now() });
    this.events.onCaption?.(caption.text, caption.cycle);
  }

  visibleCaptions(): string[] {
    const cutoff = this.now() - CAPTION_WINDOW_MS;
    this.captions = this.captions.filter((c) => c.shownAt >= cutoff);
    return this.captions.map((c) => c.text);
  }

  /** Resolves when every received frame has been presented. */
  settle(): Promise<void> {
    return this.chain;
  }

  private requestKeyframe(): void {
    const t = this.now();
    if (t - this.lastKeyframeRequest < KEYFRAME_REQUEST_MIN_GAP_MS) return;
    this.lastKeyframeRequest = t;
    this.events.requestSend?.(KEYFRAME_REQUEST);
  }
}
