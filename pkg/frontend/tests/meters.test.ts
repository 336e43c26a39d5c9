// Timestamp discipline across mount cycles: ts_ms must be non-decreasing
// within a connection even when the viewer mounts, unmounts, and mounts
// again.

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { GazeStreamer, GazeSocket } from "../src/gaze.js";

class FakeSocket implements GazeSocket {
  open = true;
  sent: string[] = [];
  send(line: string): void {
    this.sent.push(line);
  }
}

describe("timestamp discipline", () => {
  let socket: FakeSocket;
  let streamer: GazeStreamer;

  beforeEach(() => {
    vi.useFakeTimers({
      toFake: ["setTimeout", "clearTimeout", "setInterval", "clearInterval", "performance", "Date"],
    });
    socket = new FakeSocket();
    streamer = new GazeStreamer(socket, 75);
    streamer.start();
  });

  afterEach(() => {
    streamer.stop();
    vi.useRealTimers();
  });

  it("ts_ms never decreases across mount cycles", () => {
    streamer.setPointer(0.5, 0.5);
    streamer.setMounted(true);
    vi.advanceTimersByTime(500);
    streamer.setMounted(false);
    vi.advanceTimersByTime(300);
    streamer.setMounted(true);
    vi.advanceTimersByTime(500);
    const ts = socket.sent
      .map((l) => JSON.parse(l))
      .filter((m) => m.t === "g" || m.t === "c")
      .map((m) => m.ts);
    expect(ts.length).toBeGreaterThan(60);
    for (let i = 1; i < ts.length; i++) {
      expect(ts[i]).toBeGreaterThanOrEqual(ts[i - 1]);
    }
  });
});
