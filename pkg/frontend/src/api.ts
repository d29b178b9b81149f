/** Typed client for the session service.
 *
 * Every method maps one-to-one onto a service endpoint; non-2xx responses
 * are surfaced as ApiError carrying the machine-readable {code, message}
 * body so callers can branch on the code ("busy", "no_reference", ...).
 */

import type { RlePayload } from "./rle.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type SessionStatus = "idle" | "propagating" | "error";

export interface SessionSnapshot {
  status: SessionStatus;
  progress: number;
  error: string;
  frame_count: number;
  reference_frames: number[];
  computed_frames: number[];
  object_ids: number[];
}

export type SessionEvent =
  | { type: "mask_set"; seq: number; frame_index: number; permanent: boolean }
  | { type: "start"; seq: number; from_index: number; total: number }
  | { type: "progress"; seq: number; frame_index: number; preview: RlePayload }
  | { type: "complete"; seq: number; from_index: number }
  | { type: "error"; seq: number; message: string };

async function toApiError(response: Response): Promise<ApiError> {
  let code = "error";
  let message = `request failed with status ${response.status}`;
  try {
    const body = await response.json();
    if (typeof body.code === "string") code = body.code;
    if (typeof body.message === "string") message = body.message;
  } catch {
    // keep the generic message when the body is not the standard error shape
  }
  return new ApiError(response.status, code, message);
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      throw await toApiError(response);
    }
    return response;
  }

  async createSession(overrides: Record<string, unknown> = {}): Promise<string> {
    const response = await this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(overrides),
    });
    return (await response.json()).session_id;
  }

  async getSession(sessionId: string): Promise<SessionSnapshot> {
    const response = await this.request(`/sessions/${sessionId}`);
    return await response.json();
  }

  async uploadFrames(sessionId: string, frames: Blob[]): Promise<number> {
    const form = new FormData();
    frames.forEach((blob, i) => {
      form.append("frames", blob, `frame_${String(i).padStart(4, "0")}.png`);
    });
    const response = await this.request(`/sessions/${sessionId}/frames`, {
      method: "POST",
      body: form,
    });
    return (await response.json()).frame_count;
  }

  async setMask(
    sessionId: string,
    frameIndex: number,
    png: Uint8Array,
    permanent = false,
  ): Promise<void> {
    await this.request(
      `/sessions/${sessionId}/masks/${frameIndex}?permanent=${permanent}`,
      {
        method: "PUT",
        headers: { "content-type": "image/png" },
        body: png as unknown as BodyInit,
      },
    );
  }

  async getMask(sessionId: string, frameIndex: number): Promise<Uint8Array> {
    const response = await this.request(`/sessions/${sessionId}/masks/${frameIndex}`);
    return new Uint8Array(await response.arrayBuffer());
  }

  async propagate(sessionId: string, fromIndex: number): Promise<void> {
    await this.request(`/sessions/${sessionId}/propagate`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ from_index: fromIndex }),
    });
  }

  /** WebSocket URL for the session's event channel. */
  eventsUrl(sessionId: string): string {
    const ws = this.baseUrl.replace(/^http/, "ws");
    return `${ws}/sessions/${sessionId}/events`;
  }
}
