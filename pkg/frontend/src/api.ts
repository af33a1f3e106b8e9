/** Typed client for the editing service HTTP API. */

export interface CameraInfo {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  pose: number[];
}

export interface ViewInfo {
  view_id: number;
  camera: CameraInfo;
  thumbnail_url: string;
}

export interface SessionStatus {
  session_id: string;
  status: "created" | "running" | "done" | "failed";
  steps_done: number;
  loss: number | null;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

function toBase64(bytes: Uint8Array): string {
  const nodeBuffer = (globalThis as Record<string, any>).Buffer;
  if (nodeBuffer) {
    return nodeBuffer.from(bytes).toString("base64");
  }
  let bin = "";
  for (const b of bytes) bin += String.fromCharCode(b);
  return btoa(bin);
}

export class ApiClient {
  constructor(
    private base: string,
    private fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async ok(resp: Response): Promise<Response> {
    if (!resp.ok) {
      throw new Error(`${resp.status} ${await resp.text()}`);
    }
    return resp;
  }

  async listViews(): Promise<ViewInfo[]> {
    return (await this.ok(await this.fetchFn(`${this.base}/views`))).json();
  }

  async fetchBytes(path: string): Promise<Uint8Array> {
    const resp = await this.ok(await this.fetchFn(`${this.base}${path}`));
    return new Uint8Array(await resp.arrayBuffer());
  }

  renderPath(pose: string, s: number, session?: string, w?: number, h?: number): string {
    const params = new URLSearchParams({ pose, s: String(s) });
    if (session) params.set("session", session);
    if (w) params.set("w", String(w));
    if (h) params.set("h", String(h));
    return `/render?${params.toString()}`;
  }

  maskPath(sessionId: string, pose: string): string {
    const params = new URLSearchParams({ pose });
    return `/sessions/${sessionId}/mask?${params.toString()}`;
  }

  async createSession(viewId: number, png: Uint8Array, seed = 0): Promise<string> {
    const resp = await this.ok(
      await this.fetchFn(`${this.base}/sessions`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ view_id: viewId, image: toBase64(png), seed }),
      }),
    );
    return (await resp.json()).session_id;
  }

  async addEditView(sessionId: string, viewId: number, png: Uint8Array): Promise<void> {
    await this.ok(
      await this.fetchFn(`${this.base}/sessions/${sessionId}/edits`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ view_id: viewId, image: toBase64(png) }),
      }),
    );
  }

  /** Returns false when the server reports a fine-tune already running (409). */
  async startFinetune(sessionId: string, steps: number): Promise<boolean> {
    const resp = await this.fetchFn(`${this.base}/sessions/${sessionId}/finetune`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ steps }),
    });
    if (resp.status === 409) return false;
    await this.ok(resp);
    return true;
  }

  async status(sessionId: string): Promise<SessionStatus> {
    return (
      await this.ok(await this.fetchFn(`${this.base}/sessions/${sessionId}/status`))
    ).json();
  }
}
