// Cross-implementation conformance: fixtures are canonical encodings
// produced by the server implementation.

import { describe, expect, it } from "vitest";

import { decodeEnvelope, encodeControl, encodeGaze, MalformedMessage, parseCaption } from "../src/protocol.js";
import { b64, loadFixture } from "./helpers.js";

const vectors = loadFixture("protocol.json");

describe("envelope decoding", () => {
  it("parses the server-encoded envelope bit-exactly", () => {
    const patch = decodeEnvelope(b64(vectors.envelope_b64));
    const f = vectors.envelope_fields;
    expect(patch.seqNo).toBe(f.seq_no);
    expect(patch.x0).toBe(f.x0);
    expect(patch.y0).toBe(f.y0);
    expect(patch.width).toBe(f.width);
    expect(patch.height).toBe(f.height);
    expect(patch.presentAtMs).toBe(f.present_at_ms);
    expect(patch.payload.length).toBe(f.payload_len);
  });

  it("rejects truncation and bad magic", () => {
    const good = b64(vectors.envelope_b64);
    expect(() => decodeEnvelope(good.subarray(0, 20))).toThrow(MalformedMessage);
    expect(() => decodeEnvelope(good.subarray(0, good.length - 1))).toThrow(MalformedMessage);
    const wrong = good.slice();
    wrong[0] = 0x58;
    expect(() => decodeEnvelope(wrong)).toThrow(MalformedMessage);
  });
});

describe("JSON lines", () => {
  it("gaze encoding matches the server's canonical form", () => {
    expect(encodeGaze(1500, 0.25, 0.75) + "\n").toBe(vectors.gaze_line);
  });

  it("control encoding matches the server's canonical form", () => {
    expect(encodeControl("unmounted", 9000) + "\n").toBe(vectors.control_line);
  });

  it("parses server captions", () => {
    const caption = parseCaption(vectors.caption_line.trim());
    expect(caption).toEqual({ t: "v", text: "smog settles over the valley", cycle: 3 });
  });

  it("ignores non-caption text", () => {
    expect(parseCaption('{"t":"g","ts":0,"x":0,"y":0}')).toBeNull();
    expect(parseCaption("garbage")).toBeNull();
  });
});
