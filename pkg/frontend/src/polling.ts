/**
 * The submit -> fine-tune -> poll state machine.
 *
 * steps_done must never regress while polling; a 409 on finetune leaves
 * the flow in "busy" so the UI can disable its submit button.
 */

import { ApiClient, SessionStatus } from "./api.js";

export type FlowState = "idle" | "created" | "running" | "done" | "failed" | "busy";

export interface FlowUpdate {
  state: FlowState;
  stepsDone: number;
  loss: number | null;
}

export interface SubmitOptions {
  steps?: number;
  pollMs?: number;
  seed?: number;
  /** No-op edits (empty paint layer) create the session but never
   * fine-tune: the fresh clone renders bit-identically to the base. */
  skipFinetune?: boolean;
  onUpdate?: (u: FlowUpdate) => void;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export async function submitAndPoll(
  client: ApiClient,
  viewId: number,
  editPng: Uint8Array,
  options: SubmitOptions = {},
): Promise<{ sessionId: string; state: FlowState; status: SessionStatus }> {
  const steps = options.steps ?? 300;
  const pollMs = options.pollMs ?? 150;
  const sleep = options.sleep ?? defaultSleep;
  const notify = (state: FlowState, st?: SessionStatus) =>
    options.onUpdate?.({
      state,
      stepsDone: st?.steps_done ?? 0,
      loss: st?.loss ?? null,
    });

  const sessionId = await client.createSession(viewId, editPng, options.seed ?? 0);
  notify("created");
  if (options.skipFinetune) {
    const status = await client.status(sessionId);
    return { sessionId, state: "created", status };
  }
  return continueFinetune(client, sessionId, steps, pollMs, sleep, notify);
}

export async function continueFinetune(
  client: ApiClient,
  sessionId: string,
  steps: number,
  pollMs: number,
  sleep: (ms: number) => Promise<void>,
  notify: (state: FlowState, st?: SessionStatus) => void,
): Promise<{ sessionId: string; state: FlowState; status: SessionStatus }> {
  const started = await client.startFinetune(sessionId, steps);
  if (!started) {
    const status = await client.status(sessionId);
    notify("busy", status);
    return { sessionId, state: "busy", status };
  }
  let last = -1;
  for (;;) {
    const status = await client.status(sessionId);
    if (status.steps_done < last) {
      throw new Error(
        `steps_done regressed: ${last} -> ${status.steps_done}`,
      );
    }
    last = status.steps_done;
    if (status.status === "done" || status.status === "failed") {
      notify(status.status, status);
      return { sessionId, state: status.status, status };
    }
    notify("running", status);
    await sleep(pollMs);
  }
}

/** Trailing-edge rate limiter; at most one call per `minIntervalMs`. */
export function rateLimited<T extends unknown[]>(
  fn: (...args: T) => void,
  minIntervalMs: number,
  now: () => number = () => Date.now(),
  schedule: (cb: () => void, ms: number) => void = (cb, ms) => void setTimeout(cb, ms),
): (...args: T) => void {
  let lastRun = -Infinity;
  let pending: T | null = null;
  let scheduled = false;
  const run = (args: T) => {
    lastRun = now();
    fn(...args);
  };
  const flush = () => {
    scheduled = false;
    if (pending !== null) {
      const args = pending;
      pending = null;
      run(args);
    }
  };
  return (...args: T) => {
    const wait = minIntervalMs - (now() - lastRun);
    if (wait <= 0) {
      run(args);
      return;
    }
    pending = args;
    if (!scheduled) {
      scheduled = true;
      schedule(flush, wait);
    }
  };
}
