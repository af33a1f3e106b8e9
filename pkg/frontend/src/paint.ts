/**
 * Paint-layer operations on raw RGBA buffers.
 *
 * The editor keeps the user's strokes in an RGBA overlay the same size as
 * the selected view; the edit shipped to the server is the overlay
 * alpha-composited over the original view and flattened to RGB.
 */

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

export function createPaintLayer(width: number, height: number): Uint8ClampedArray {
  return new Uint8ClampedArray(width * height * 4);
}

/** Stamp a filled circle of full opacity into the overlay. */
export function stampBrush(
  layer: Uint8ClampedArray,
  width: number,
  height: number,
  cx: number,
  cy: number,
  radius: number,
  color: Rgb,
): void {
  const r2 = radius * radius;
  const x0 = Math.max(0, Math.floor(cx - radius));
  const x1 = Math.min(width - 1, Math.ceil(cx + radius));
  const y0 = Math.max(0, Math.floor(cy - radius));
  const y1 = Math.min(height - 1, Math.ceil(cy + radius));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r2) {
        const p = (y * width + x) * 4;
        layer[p] = color.r;
        layer[p + 1] = color.g;
        layer[p + 2] = color.b;
        layer[p + 3] = 255;
      }
    }
  }
}

/** Paint an axis-aligned rectangle at full opacity (scripted edits). */
export function stampRect(
  layer: Uint8ClampedArray,
  width: number,
  x0: number,
  y0: number,
  x1: number,
  y1: number,
  color: Rgb,
): void {
  for (let y = y0; y < y1; y++) {
    for (let x = x0; x < x1; x++) {
      const p = (y * width + x) * 4;
      layer[p] = color.r;
      layer[p + 1] = color.g;
      layer[p + 2] = color.b;
      layer[p + 3] = 255;
    }
  }
}

/**
 * Flood-fill the overlay from (sx, sy), selecting the connected region of
 * the *base image* whose channels stay within `tolerance` of the seed
 * color (4-connectivity). Tolerance 0 selects exactly the connected
 * equal-color region.
 */
export function floodFill(
  base: Uint8ClampedArray,
  layer: Uint8ClampedArray,
  width: number,
  height: number,
  sx: number,
  sy: number,
  tolerance: number,
  color: Rgb,
): number {
  if (sx < 0 || sy < 0 || sx >= width || sy >= height) return 0;
  const seed = (sy * width + sx) * 4;
  const sr = base[seed];
  const sg = base[seed + 1];
  const sb = base[seed + 2];
  const visited = new Uint8Array(width * height);
  const stack: number[] = [sy * width + sx];
  let filled = 0;
  const matches = (p: number) =>
    Math.abs(base[p * 4] - sr) <= tolerance &&
    Math.abs(base[p * 4 + 1] - sg) <= tolerance &&
    Math.abs(base[p * 4 + 2] - sb) <= tolerance;
  while (stack.length) {
    const p = stack.pop()!;
    if (visited[p]) continue;
    visited[p] = 1;
    if (!matches(p)) continue;
    const q = p * 4;
    layer[q] = color.r;
    layer[q + 1] = color.g;
    layer[q + 2] = color.b;
    layer[q + 3] = 255;
    filled++;
    const x = p % width;
    const y = (p - x) / width;
    if (x > 0) stack.push(p - 1);
    if (x < width - 1) stack.push(p + 1);
    if (y > 0) stack.push(p - width);
    if (y < height - 1) stack.push(p + width);
  }
  return filled;
}

/**
 * Alpha-composite the overlay onto the original view, flattened to RGBA
 * with full alpha (the server consumes RGB). Integer math mirrors the
 * canvas "source-over" blend on 8-bit channels.
 */
export function composeEdit(
  view: Uint8ClampedArray,
  layer: Uint8ClampedArray,
  width: number,
  height: number,
): Uint8ClampedArray {
  const out = new Uint8ClampedArray(width * height * 4);
  for (let p = 0; p < width * height; p++) {
    const q = p * 4;
    const a = layer[q + 3] / 255;
    out[q] = Math.round(layer[q] * a + view[q] * (1 - a));
    out[q + 1] = Math.round(layer[q + 1] * a + view[q + 1] * (1 - a));
    out[q + 2] = Math.round(layer[q + 2] * a + view[q + 2] * (1 - a));
    out[q + 3] = 255;
  }
  return out;
}

export function layerIsEmpty(layer: Uint8ClampedArray): boolean {
  for (let i = 3; i < layer.length; i += 4) {
    if (layer[i] !== 0) return false;
  }
  return true;
}
