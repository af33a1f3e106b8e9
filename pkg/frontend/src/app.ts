/**
 * Browser wiring: view strip, paint canvas, orbit viewer, specular slider,
 * mask overlay, and the submit/fine-tune flow.
 *
 * Edits are composed client-side and shipped as full PNG frames; the
 * server is only ever touched through the documented endpoints.
 */

import { ApiClient, ViewInfo } from "./api.js";
import { applyDrag, orbitFromCamera, orbitPose, poseParam } from "./orbit.js";
import {
  composeEdit,
  createPaintLayer,
  floodFill,
  layerIsEmpty,
  stampBrush,
} from "./paint.js";
import { rateLimited, submitAndPoll } from "./polling.js";
import { clampSpecular, EditorState, initialState } from "./state.js";

const MAX_RENDER_RPS = 4;

function el<T extends HTMLElement>(id: string): T {
  const got = document.getElementById(id);
  if (!got) throw new Error(`missing element #${id}`);
  return got as T;
}

async function canvasToPngBytes(canvas: HTMLCanvasElement): Promise<Uint8Array> {
  const blob: Blob = await new Promise((resolve, reject) =>
    canvas.toBlob((b) => (b ? resolve(b) : reject(new Error("toBlob failed"))), "image/png"),
  );
  return new Uint8Array(await blob.arrayBuffer());
}

export class App {
  private state: EditorState = initialState();
  private views: ViewInfo[] = [];
  private viewPixels: Uint8ClampedArray | null = null;
  private paintCanvas!: HTMLCanvasElement;
  private orbitCanvas!: HTMLCanvasElement;
  private statusLine!: HTMLElement;
  private submitButton!: HTMLButtonElement;
  private requestRender!: () => void;

  constructor(private client: ApiClient) {}

  async start(): Promise<void> {
    this.paintCanvas = el<HTMLCanvasElement>("paint-canvas");
    this.orbitCanvas = el<HTMLCanvasElement>("orbit-canvas");
    this.statusLine = el("status-line");
    this.submitButton = el<HTMLButtonElement>("submit-button");
    this.requestRender = rateLimited(
      () => void this.refreshOrbitRender(),
      1000 / MAX_RENDER_RPS,
    );

    this.views = await this.client.listViews();
    this.buildViewStrip();
    this.bindPaintTools();
    this.bindOrbitAndSlider();
    this.bindSubmit();
    if (this.views.length) await this.selectView(0);
  }

  private buildViewStrip(): void {
    const strip = el("view-strip");
    strip.innerHTML = "";
    for (const v of this.views) {
      const img = document.createElement("img");
      img.src = v.thumbnail_url;
      img.className = "thumb";
      img.title = `view ${v.view_id}`;
      img.onclick = () => void this.selectView(v.view_id);
      strip.appendChild(img);
    }
  }

  private async selectView(viewId: number): Promise<void> {
    const info = this.views[viewId];
    const { width, height } = info.camera;
    this.state.selectedView = viewId;
    this.state.viewWidth = width;
    this.state.viewHeight = height;
    this.state.paintLayer = createPaintLayer(width, height);
    this.paintCanvas.width = width;
    this.paintCanvas.height = height;
    const img = new Image();
    img.src = info.thumbnail_url;
    await img.decode();
    const ctx = this.paintCanvas.getContext("2d")!;
    ctx.drawImage(img, 0, 0);
    this.viewPixels = new Uint8ClampedArray(
      ctx.getImageData(0, 0, width, height).data,
    );
    this.state.orbit = orbitFromCamera(info.camera.pose, [0, 0, 0]);
    this.redrawPaint();
    this.requestRender();
  }

  private redrawPaint(): void {
    if (!this.viewPixels || !this.state.paintLayer) return;
    const { viewWidth: w, viewHeight: h } = this.state;
    const composed = composeEdit(this.viewPixels, this.state.paintLayer, w, h);
    const ctx = this.paintCanvas.getContext("2d")!;
    ctx.putImageData(new ImageData(composed as Uint8ClampedArray<ArrayBuffer>, w, h), 0, 0);
  }

  private bindPaintTools(): void {
    const radius = el<HTMLInputElement>("brush-radius");
    const color = el<HTMLInputElement>("brush-color");
    const tolerance = el<HTMLInputElement>("fill-tolerance");
    const modePaint = el<HTMLInputElement>("mode-paint");
    radius.oninput = () => (this.state.brush.radius = Number(radius.value));
    tolerance.oninput = () => (this.state.fillTolerance = Number(tolerance.value));
    color.oninput = () => {
      const v = color.value;
      this.state.brush.color = {
        r: parseInt(v.slice(1, 3), 16),
        g: parseInt(v.slice(3, 5), 16),
        b: parseInt(v.slice(5, 7), 16),
      };
    };

    let painting = false;
    const paintAt = (ev: MouseEvent) => {
      if (!this.state.paintLayer || !this.viewPixels) return;
      const rect = this.paintCanvas.getBoundingClientRect();
      const x = Math.floor(((ev.clientX - rect.left) / rect.width) * this.state.viewWidth);
      const y = Math.floor(((ev.clientY - rect.top) / rect.height) * this.state.viewHeight);
      if (modePaint.checked) {
        stampBrush(
          this.state.paintLayer, this.state.viewWidth, this.state.viewHeight,
          x, y, this.state.brush.radius, this.state.brush.color,
        );
      } else {
        floodFill(
          this.viewPixels, this.state.paintLayer,
          this.state.viewWidth, this.state.viewHeight,
          x, y, this.state.fillTolerance, this.state.brush.color,
        );
      }
      this.redrawPaint();
    };
    this.paintCanvas.onmousedown = (ev) => {
      painting = true;
      paintAt(ev);
    };
    this.paintCanvas.onmousemove = (ev) => painting && modePaint.checked && paintAt(ev);
    window.addEventListener("mouseup", () => (painting = false));
    el<HTMLButtonElement>("clear-button").onclick = () => {
      if (this.state.paintLayer) this.state.paintLayer.fill(0);
      this.redrawPaint();
    };
  }

  private bindOrbitAndSlider(): void {
    let dragging = false;
    let last: [number, number] = [0, 0];
    this.orbitCanvas.onmousedown = (ev) => {
      dragging = true;
      last = [ev.clientX, ev.clientY];
    };
    window.addEventListener("mousemove", (ev) => {
      if (!dragging || !this.state.orbit) return;
      this.state.orbit = applyDrag(
        this.state.orbit, ev.clientX - last[0], ev.clientY - last[1],
      );
      last = [ev.clientX, ev.clientY];
      this.requestRender();
    });
    window.addEventListener("mouseup", () => (dragging = false));

    const slider = el<HTMLInputElement>("specular-slider");
    const sliderLabel = el("specular-value");
    slider.oninput = () => {
      this.state.specularScale = clampSpecular(Number(slider.value));
      sliderLabel.textContent = this.state.specularScale.toFixed(2);
      this.requestRender();
    };
    el<HTMLButtonElement>("diffuse-only").onclick = () => {
      slider.value = "0";
      this.state.specularScale = 0;
      sliderLabel.textContent = "0.00";
      this.requestRender();
    };
    el<HTMLInputElement>("mask-toggle").onchange = (ev) => {
      this.state.showMask = (ev.target as HTMLInputElement).checked;
      this.requestRender();
    };
  }

  private async refreshOrbitRender(): Promise<void> {
    if (!this.state.orbit) return;
    const pose = poseParam(orbitPose(this.state.orbit));
    const path = this.client.renderPath(
      pose, this.state.specularScale, this.state.sessionId ?? undefined,
    );
    const bytes = await this.client.fetchBytes(path);
    const img = new Image();
    img.src = URL.createObjectURL(new Blob([bytes as BlobPart], { type: "image/png" }));
    await img.decode();
    this.orbitCanvas.width = img.width;
    this.orbitCanvas.height = img.height;
    const ctx = this.orbitCanvas.getContext("2d")!;
    ctx.drawImage(img, 0, 0);
    if (this.state.showMask && this.state.sessionId) {
      const maskBytes = await this.client.fetchBytes(
        this.client.maskPath(this.state.sessionId, pose),
      );
      const mimg = new Image();
      mimg.src = URL.createObjectURL(new Blob([maskBytes as BlobPart], { type: "image/png" }));
      await mimg.decode();
      ctx.globalAlpha = 0.5;
      ctx.drawImage(mimg, 0, 0);
      ctx.globalAlpha = 1.0;
    }
  }

  private bindSubmit(): void {
    this.submitButton.onclick = async () => {
      if (this.state.busy || this.state.selectedView === null) return;
      const noop = !this.state.paintLayer || layerIsEmpty(this.state.paintLayer);
      if (noop) {
        // a no-op edit: create the session but never fine-tune, so the
        // session render stays bit-identical to the base model
        this.statusLine.textContent = "paint layer is empty: submitting as a no-op edit";
      }
      this.state.busy = true;
      this.submitButton.disabled = true;
      try {
        const png = await canvasToPngBytes(this.paintCanvas);
        const result = await submitAndPoll(
          this.client, this.state.selectedView, png,
          {
            skipFinetune: noop,
            onUpdate: (u) => {
              this.statusLine.textContent =
                `session ${u.state}: step ${u.stepsDone}` +
                (u.loss !== null ? ` loss ${u.loss.toExponential(2)}` : "");
            },
          },
        );
        if (result.state === "done" || result.state === "created") {
          this.state.sessionId = result.sessionId;
          this.requestRender();
        }
      } finally {
        this.state.busy = false;
        this.submitButton.disabled = false;
      }
    };
  }
}
