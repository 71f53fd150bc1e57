import { describe, expect, it } from "vitest";

import { decodeGrayPng, encodePng, fromBase64, pngDimensions, toBase64 } from "../src/png.js";

function lcg(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state;
  };
}

describe("png codec", () => {
  it("encodes and decodes grayscale losslessly", async () => {
    const rand = lcg(7);
    const pixels = new Uint8Array(40 * 25);
    for (let i = 0; i < pixels.length; i++) pixels[i] = rand() % 2 ? 255 : 0;
    const png = encodePng({ width: 40, height: 25, channels: 1, pixels });
    const back = await decodeGrayPng(png);
    expect(back.width).toBe(40);
    expect(back.height).toBe(25);
    expect(Array.from(back.pixels)).toEqual(Array.from(pixels));
  });

  it("handles buffers larger than one deflate stored block", async () => {
    const pixels = new Uint8Array(300 * 300).fill(255);
    const png = encodePng({ width: 300, height: 300, channels: 1, pixels });
    const back = await decodeGrayPng(png);
    expect(back.pixels.every((v) => v === 255)).toBe(true);
  });

  it("reports dimensions without decoding pixel data", () => {
    const png = encodePng({ width: 17, height: 9, channels: 3, pixels: new Uint8Array(17 * 9 * 3) });
    expect(pngDimensions(png)).toEqual({ width: 17, height: 9 });
  });

  it("rejects mismatched buffers and non-PNG bytes", () => {
    expect(() => encodePng({ width: 4, height: 4, channels: 1, pixels: new Uint8Array(3) })).toThrow();
    expect(() => pngDimensions(new Uint8Array([1, 2, 3]))).toThrow();
  });

  it("base64 helpers round-trip", () => {
    const rand = lcg(3);
    const data = new Uint8Array(1000);
    for (let i = 0; i < data.length; i++) data[i] = rand() % 256;
    expect(Array.from(fromBase64(toBase64(data)))).toEqual(Array.from(data));
  });
});
