// Client-side canvas state: a full-canvas keyframe baseline plus patches
// applied in seq_no order. A gap in seq_no (or a malformed frame upstream)
// flags that a fresh keyframe should be requested; stale frames are
// dropped. The composite hash matches the server's canvas hash (SHA-256
// over row-major RGB bytes) once the stream is quiescent.

import { FramePatch } from "./protocol.js";

export interface DecodedImage {
  width: number;
  height: number;
  rgba: Uint8Array;
}

export type PngDecoder = (png: Uint8Array) => Promise<DecodedImage>;

export class Compositor {
  width = 0;
  height = 0;
  rgba: Uint8Array = new Uint8Array(0);
  lastSeq: number | null = null;
  needsKeyframe = false;
  patchesApplied = 0;
  keyframesApplied = 0;
  keyframesSkipped = 0;
  staleDropped = 0;
  private expectedW = 0;
  private expectedH = 0;

  get ready(): boolean {
    return this.width > 0;
  }

  /** Canvas dimensions from the session endpoint; disambiguates a patch
   *  at the origin from a full-canvas keyframe before the first one. */
  setExpectedDims(width: number, height: number): void {
    this.expectedW = width;
    this.expectedH = height;
  }

  isKeyframe(patch: FramePatch): boolean {
    if (patch.x0 !== 0 || patch.y0 !== 0) return false;
    if (this.expectedW > 0) {
      return patch.width === this.expectedW && patch.height === this.expectedH;
    }
    if (!this.ready) return true;
    return patch.width === this.width && patch.height === this.height;
  }

  async apply(patch: FramePatch, decode: PngDecoder): Promise<void> {
    if (this.lastSeq !== null && patch.seqNo <= this.lastSeq) {
      this.staleDropped += 1;
      return;
    }
    const keyframe = this.isKeyframe(patch);
    if (!this.ready && !keyframe) {
      // nothing to composite onto yet
      this.needsKeyframe = true;
      return;
    }
    if (this.lastSeq !== null && patch.seqNo > this.lastSeq + 1 && !keyframe) {
      this.needsKeyframe = true;
    }
    if (keyframe && this.ready && !this.needsKeyframe && this.lastSeq !== null) {
      // in sync: a periodic refresh would snap ahead of the playing morph,
      // so consume its sequence slot without touching pixels
      this.lastSeq = patch.seqNo;
      this.keyframesSkipped += 1;
      return;
    }
    const img = await decode(patch.payload);
    if (img.width !== patch.width || img.height !== patch.height) {
      this.needsKeyframe = true;
      return;
    }
    if (keyframe) {
      this.width = patch.width;
      this.height = patch.height;
      this.rgba = img.rgba.slice();
      this.needsKeyframe = false;
      this.keyframesApplied += 1;
    } else {
      this.blit(img, patch.x0, patch.y0);
      this.patchesApplied += 1;
    }
    this.lastSeq = patch.seqNo;
  }

  private blit(img: DecodedImage, x0: number, y0: number): void {
    const w = Math.min(img.width, this.width - x0);
    const h = Math.min(img.height, this.height - y0);
    for (let row = 0; row < h; row++) {
      const src = row * img.width * 4;
      const dst = ((y0 + row) * this.width + x0) * 4;
      this.rgba.set(img.rgba.subarray(src, src + w * 4), dst);
    }
  }

  rgbBytes(): Uint8Array {
    const n = this.width * this.height;
    const rgb = new Uint8Array(n * 3);
    for (let i = 0, j = 0; i < n; i++, j += 4) {
      rgb[i * 3] = this.rgba[j];
      rgb[i * 3 + 1] = this.rgba[j + 1];
      rgb[i * 3 + 2] = this.rgba[j + 2];
    }
    return rgb;
  }

  async hash(): Promise<string> {
    const digest = await crypto.subtle.digest("SHA-256", this.rgbBytes() as BufferSource);
    return [...new Uint8Array(digest)].map((b) => b.toString(16).padStart(2, "0")).join("");
  }
}
