import { deflateSync, inflateSync } from "node:zlib";

import { describe, expect, it } from "vitest";

import { decodePng, encodePng, rgbaToRgb, toRgba } from "../src/png.js";

const deflate = (raw: Uint8Array) => new Uint8Array(deflateSync(raw));
const inflate = (raw: Uint8Array) => new Uint8Array(inflateSync(raw));

describe("png codec", () => {
  it("rgb roundtrip is lossless", () => {
    const w = 13, h = 7;
    const pixels = new Uint8Array(w * h * 3);
    for (let i = 0; i < pixels.length; i++) pixels[i] = (i * 37) % 256;
    const png = encodePng(pixels, w, h, 3, deflate);
    const back = decodePng(png, inflate);
    expect(back.width).toBe(w);
    expect(back.height).toBe(h);
    expect(back.channels).toBe(3);
    expect(Array.from(back.pixels)).toEqual(Array.from(pixels));
  });

  it("rgba roundtrip and conversions", () => {
    const w = 5, h = 4;
    const rgba = new Uint8ClampedArray(w * h * 4);
    for (let i = 0; i < rgba.length; i++) rgba[i] = (i * 91) % 256;
    const png = encodePng(rgba, w, h, 4, deflate);
    const back = decodePng(png, inflate);
    expect(back.channels).toBe(4);
    const asRgba = toRgba(back);
    expect(Array.from(asRgba)).toEqual(Array.from(rgba));
    const rgb = rgbaToRgb(asRgba);
    expect(rgb.length).toBe(w * h * 3);
    expect(rgb[0]).toBe(rgba[0]);
  });

  it("rejects non-png bytes", () => {
    expect(() => decodePng(new Uint8Array([1, 2, 3, 4, 5, 6, 7, 8]), inflate)).toThrow();
  });
});
