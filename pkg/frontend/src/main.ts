// Browser app: steer the live synthesis with the pointer, watch the
// morphing stream, read captions, monitor send/render rates.
//
// Query parameters: ?host=127.0.0.1:8760 (server), &role=immersant|bystander.

import { ViewClient } from "./client.js";
import { DecodedImage } from "./compositor.js";
import { GazeStreamer, ReconnectingSocket } from "./gaze.js";
import { RateMeter } from "./meters.js";

const params = new URLSearchParams(location.search);
const host = params.get("host") ?? location.host;
const role = params.get("role") ?? "immersant";
const scheme = location.protocol === "https:" ? "wss" : "ws";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const mountButton = document.getElementById("mount") as HTMLButtonElement;
const meterBox = document.getElementById("meters")!;
const captionBox = document.getElementById("captions")!;
const statusBox = document.getElementById("status")!;

const scratch = document.createElement("canvas");
const scratchCtx = scratch.getContext("2d", { willReadFrequently: true })!;

async function decodePng(png: Uint8Array): Promise<DecodedImage> {
  const bitmap = await createImageBitmap(new Blob([png as BlobPart], { type: "image/png" }));
  scratch.width = bitmap.width;
  scratch.height = bitmap.height;
  scratchCtx.drawImage(bitmap, 0, 0);
  bitmap.close();
  const data = scratchCtx.getImageData(0, 0, scratch.width, scratch.height);
  return { width: data.width, height: data.height, rgba: new Uint8Array(data.data.buffer) };
}

const renderMeter = new RateMeter(2000);
let dirty = false;

const view = new ViewClient(decodePng, {
  onDraw: () => {
    dirty = true;
  },
  onCaption: () => undefined,
  requestSend: (line) => viewSocket.send(line),
});

function paint() {
  renderMeter.note();
  if (dirty && view.compositor.ready) {
    if (canvas.width !== view.compositor.width) {
      canvas.width = view.compositor.width;
      canvas.height = view.compositor.height;
    }
    const n = view.compositor.width * view.compositor.height * 4;
    const pixels = new Uint8ClampedArray(n);
    pixels.set(view.compositor.rgba.subarray(0, n));
    ctx.putImageData(new ImageData(pixels, view.compositor.width, view.compositor.height), 0, 0);
    dirty = false;
  }
  captionBox.textContent = view.visibleCaptions().join("  ·  ");
  requestAnimationFrame(paint);
}

// canvas dimensions up front so an origin-anchored patch arriving before
// the first keyframe cannot masquerade as one
fetch(`${location.protocol === "https:" ? "https" : "http"}://${host}/session`)
  .then((resp) => resp.json())
  .then((info) => view.compositor.setExpectedDims(info.canvas_width, info.canvas_height))
  .catch(() => undefined);

const viewSocket = new ReconnectingSocket(`${scheme}://${host}/ws/view?role=${role}`);
viewSocket.onmessage = (data) => {
  if (typeof data === "string") view.handleText(data);
  else view.handleBinary(data);
};

const gazeSocket = new ReconnectingSocket(`${scheme}://${host}/ws/gaze`);
const streamer = new GazeStreamer(gazeSocket, 75);
gazeSocket.onopen = () => streamer.sendControl(); // re-assert mount state after reconnects
streamer.start();

canvas.addEventListener("pointermove", (ev) => {
  const rect = canvas.getBoundingClientRect();
  streamer.setPointer((ev.clientX - rect.left) / rect.width, (ev.clientY - rect.top) / rect.height);
});

mountButton.addEventListener("click", () => {
  streamer.setMounted(!streamer.mounted);
  mountButton.textContent = streamer.mounted ? "unmount" : "mount";
  mountButton.classList.toggle("mounted", streamer.mounted);
});

setInterval(() => {
  const send = streamer.sendMeter.rate();
  const fps = renderMeter.rate();
  meterBox.textContent =
    `send ${send.toFixed(1)} Hz  ·  render ${fps.toFixed(0)} FPS  ·  ` +
    `frames ${view.framesPresented}  ·  seq ${view.compositor.lastSeq ?? "-"}`;
  statusBox.textContent =
    (gazeSocket.open ? "gaze ✓" : "gaze ✗") + "  " + (viewSocket.open ? "view ✓" : "view ✗");
}, 250);

requestAnimationFrame(paint);
