import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";
// @ts-ignore - no type shims shipped for pngjs
import { PNG } from "pngjs";

import { DecodedImage } from "../src/compositor.js";

const here = dirname(fileURLToPath(import.meta.url));

export function loadFixture(name: string): any {
  return JSON.parse(readFileSync(join(here, "fixtures", name), "utf-8"));
}

export const decodePng = async (png: Uint8Array): Promise<DecodedImage> => {
  const img = PNG.sync.read(Buffer.from(png));
  return { width: img.width, height: img.height, rgba: new Uint8Array(img.data) };
};

export function b64(data: string): Uint8Array {
  return new Uint8Array(Buffer.from(data, "base64"));
}
