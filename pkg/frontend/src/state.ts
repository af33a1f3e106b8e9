/** Editor state shared by the canvas tools and the session flow. */

import { OrbitState } from "./orbit.js";
import { Rgb } from "./paint.js";

export type BrushMode = "paint" | "fill";

export interface EditorState {
  selectedView: number | null;
  paintLayer: Uint8ClampedArray | null;
  viewWidth: number;
  viewHeight: number;
  brush: {
    radius: number;
    color: Rgb;
    mode: BrushMode;
  };
  fillTolerance: number; // 0..255 per channel
  sessionId: string | null;
  orbit: OrbitState | null;
  specularScale: number; // slider, 0..2
  showMask: boolean;
  busy: boolean;
}

export function initialState(): EditorState {
  return {
    selectedView: null,
    paintLayer: null,
    viewWidth: 0,
    viewHeight: 0,
    brush: { radius: 6, color: { r: 40, g: 200, b: 60 }, mode: "paint" },
    fillTolerance: 0,
    sessionId: null,
    orbit: null,
    specularScale: 1.0,
    showMask: false,
    busy: false,
  };
}

export function clampSpecular(s: number): number {
  return Math.min(2, Math.max(0, s));
}
