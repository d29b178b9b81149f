/** Browser annotation app for the session service.
 *
 * One session per tab. The page uploads locally chosen frames, lets the
 * user paint per-object masks, streams propagation previews over the event
 * socket, and falls back to status polling plus mask fetches whenever the
 * socket drops. All playback state lives in a SessionView folded from
 * service responses; this file only wires DOM events to the typed client
 * and redraws.
 */

import { ApiError, ServiceClient, type SessionEvent } from "./api.js";
import { overlayPixels } from "./overlay.js";
import { applyStroke, type StrokePoint } from "./paint.js";
import { labelCss } from "./palette.js";
import { decodeMaskPng, encodeMaskPng } from "./png.js";
import { cloneLabelMap, createLabelMap, type LabelMap } from "./rle.js";
import {
  applyEvent,
  applySnapshot,
  emptyView,
  framesNeedingMasks,
  resolveMask,
  type SessionView,
} from "./state.js";

const MAX_OBJECT_BUTTONS = 8;
const POLL_MS = 1000;
const RECONNECT_MS = 1500;

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

const ui = {
  serverUrl: byId<HTMLInputElement>("server-url"),
  overrides: byId<HTMLInputElement>("config-overrides"),
  frameFiles: byId<HTMLInputElement>("frame-files"),
  openSession: byId<HTMLButtonElement>("open-session"),
  sessionId: byId<HTMLInputElement>("session-id"),
  attachSession: byId<HTMLButtonElement>("attach-session"),
  statusLine: byId<HTMLElement>("status-line"),
  viewer: byId<HTMLCanvasElement>("viewer"),
  filmstrip: byId<HTMLElement>("filmstrip"),
  objectButtons: byId<HTMLElement>("object-buttons"),
  brushRadius: byId<HTMLInputElement>("brush-radius"),
  brushRadiusValue: byId<HTMLElement>("brush-radius-value"),
  permanentPin: byId<HTMLInputElement>("permanent-pin"),
  commitMask: byId<HTMLButtonElement>("commit-mask"),
  clearEdit: byId<HTMLButtonElement>("clear-edit"),
  pinPermanent: byId<HTMLButtonElement>("pin-permanent"),
  propagate: byId<HTMLButtonElement>("propagate"),
  frameLabel: byId<HTMLElement>("frame-label"),
};

interface AppState {
  client: ServiceClient | null;
  sessionId: string | null;
  view: SessionView;
  frameBitmaps: (ImageBitmap | null)[];
  frameSize: { width: number; height: number } | null;
  currentFrame: number;
  activeLabel: number;
  editing: LabelMap | null;
  stroke: StrokePoint[];
  painting: boolean;
  socket: WebSocket | null;
  pollTimer: number | null;
  reconnectTimer: number | null;
  fetching: Set<number>;
  notice: string;
}

const state: AppState = {
  client: null,
  sessionId: null,
  view: emptyView(),
  frameBitmaps: [],
  frameSize: null,
  currentFrame: 0,
  activeLabel: 1,
  editing: null,
  stroke: [],
  painting: false,
  socket: null,
  pollTimer: null,
  reconnectTimer: null,
  fetching: new Set(),
  notice: "",
};

function setNotice(text: string): void {
  state.notice = text;
  render();
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

// ---------------------------------------------------------------------------
// session lifecycle

async function openSession(): Promise<void> {
  const files = Array.from(ui.frameFiles.files ?? []);
  if (files.length === 0) {
    setNotice("choose at least one frame image first");
    return;
  }
  files.sort((a, b) => a.name.localeCompare(b.name));
  let overrides: Record<string, unknown>;
  try {
    overrides = JSON.parse(ui.overrides.value || "{}");
  } catch (err) {
    setNotice(`config overrides are not valid JSON: ${describeError(err)}`);
    return;
  }
  const client = new ServiceClient(ui.serverUrl.value);
  try {
    const sessionId = await client.createSession(overrides);
    await client.uploadFrames(sessionId, files);
    const bitmaps = await Promise.all(files.map((f) => createImageBitmap(f)));
    resetSession(client, sessionId, bitmaps);
    state.view = applySnapshot(state.view, await client.getSession(sessionId));
    ui.sessionId.value = sessionId;
    setNotice(`session ${sessionId} opened with ${bitmaps.length} frames`);
  } catch (err) {
    setNotice(describeError(err));
  }
}

async function attachSession(): Promise<void> {
  const sessionId = ui.sessionId.value.trim();
  if (sessionId === "") {
    setNotice("enter a session id to attach to");
    return;
  }
  const client = new ServiceClient(ui.serverUrl.value);
  try {
    const snap = await client.getSession(sessionId);
    resetSession(client, sessionId, new Array(snap.frame_count).fill(null));
    state.view = applySnapshot(state.view, snap);
    setNotice(`attached to session ${sessionId}`);
    void fetchPendingMasks();
  } catch (err) {
    setNotice(describeError(err));
  }
}

function resetSession(
  client: ServiceClient,
  sessionId: string,
  bitmaps: (ImageBitmap | null)[],
): void {
  stopPolling();
  if (state.socket !== null) {
    state.socket.onclose = null;
    state.socket.close();
  }
  state.client = client;
  state.sessionId = sessionId;
  state.view = emptyView(bitmaps.length);
  state.frameBitmaps = bitmaps;
  const first = bitmaps.find((b) => b !== null) ?? null;
  state.frameSize = first === null ? null : { width: first.width, height: first.height };
  state.currentFrame = 0;
  state.editing = null;
  state.fetching = new Set();
  connectEvents();
}

// ---------------------------------------------------------------------------
// event socket with polling fallback

function connectEvents(): void {
  const { client, sessionId } = state;
  if (client === null || sessionId === null) return;
  const socket = new WebSocket(client.eventsUrl(sessionId));
  state.socket = socket;
  socket.onopen = () => {
    stopPolling();
    render();
  };
  socket.onmessage = (msg) => {
    const event = JSON.parse(msg.data as string) as SessionEvent;
    state.view = applyEvent(state.view, event);
    void fetchPendingMasks();
    render();
  };
  socket.onclose = () => {
    if (state.socket === socket) {
      state.socket = null;
      startPolling();
      state.reconnectTimer = window.setTimeout(() => {
        state.reconnectTimer = null;
        connectEvents();
      }, RECONNECT_MS);
    }
  };
}

function startPolling(): void {
  if (state.pollTimer !== null) return;
  state.pollTimer = window.setInterval(() => {
    const { client, sessionId } = state;
    if (client === null || sessionId === null) return;
    client
      .getSession(sessionId)
      .then((snap) => {
        state.view = applySnapshot(state.view, snap);
        void fetchPendingMasks();
        render();
      })
      .catch(() => {
        // server unreachable; keep polling until it comes back
      });
  }, POLL_MS);
  render();
}

function stopPolling(): void {
  if (state.pollTimer !== null) {
    window.clearInterval(state.pollTimer);
    state.pollTimer = null;
  }
  if (state.reconnectTimer !== null) {
    window.clearTimeout(state.reconnectTimer);
    state.reconnectTimer = null;
  }
}

async function fetchPendingMasks(): Promise<void> {
  const { client, sessionId } = state;
  if (client === null || sessionId === null) return;
  for (const frame of framesNeedingMasks(state.view)) {
    if (state.fetching.has(frame)) continue;
    state.fetching.add(frame);
    try {
      const bytes = await client.getMask(sessionId, frame);
      state.view = resolveMask(state.view, frame, await decodeMaskPng(bytes));
      if (state.frameSize === null) {
        const mask = state.view.masks.get(frame);
        if (mask !== undefined) {
          state.frameSize = { width: mask.width, height: mask.height };
        }
      }
      render();
    } catch {
      // mask may be mid-write; the next event or poll retries it
      state.view.pendingFetch.add(frame);
    } finally {
      state.fetching.delete(frame);
    }
  }
}

// ---------------------------------------------------------------------------
// painting

function canvasPoint(evt: PointerEvent): StrokePoint | null {
  if (state.frameSize === null) return null;
  const rect = ui.viewer.getBoundingClientRect();
  return {
    x: ((evt.clientX - rect.left) / rect.width) * state.frameSize.width,
    y: ((evt.clientY - rect.top) / rect.height) * state.frameSize.height,
  };
}

function beginStroke(evt: PointerEvent): void {
  const point = canvasPoint(evt);
  if (point === null || state.sessionId === null) return;
  if (state.editing === null) {
    const committed = state.view.masks.get(state.currentFrame);
    state.editing =
      committed !== undefined
        ? cloneLabelMap(committed)
        : createLabelMap(state.frameSize!.width, state.frameSize!.height);
  }
  state.painting = true;
  state.stroke = [point];
  applyStroke(state.editing, [point], brushRadius(), state.activeLabel);
  ui.viewer.setPointerCapture(evt.pointerId);
  render();
}

function continueStroke(evt: PointerEvent): void {
  if (!state.painting || state.editing === null) return;
  const point = canvasPoint(evt);
  if (point === null) return;
  const last = state.stroke[state.stroke.length - 1];
  state.stroke.push(point);
  applyStroke(state.editing, [last, point], brushRadius(), state.activeLabel);
  render();
}

function endStroke(): void {
  state.painting = false;
  state.stroke = [];
}

function brushRadius(): number {
  return Number(ui.brushRadius.value);
}

async function commitMask(): Promise<void> {
  const { client, sessionId, editing } = state;
  if (client === null || sessionId === null || editing === null) {
    setNotice("paint something before committing");
    return;
  }
  try {
    const png = await encodeMaskPng(editing);
    await client.setMask(sessionId, state.currentFrame, png, ui.permanentPin.checked);
    state.editing = null;
    setNotice(`mask committed on frame ${state.currentFrame}`);
  } catch (err) {
    setNotice(describeError(err));
  }
}

async function pinPermanent(): Promise<void> {
  const { client, sessionId } = state;
  const mask = state.view.masks.get(state.currentFrame);
  if (client === null || sessionId === null || mask === undefined) {
    setNotice("no committed mask on this frame to pin");
    return;
  }
  try {
    await client.setMask(sessionId, state.currentFrame, await encodeMaskPng(mask), true);
    setNotice(`frame ${state.currentFrame} pinned as permanent memory`);
  } catch (err) {
    setNotice(describeError(err));
  }
}

async function propagate(): Promise<void> {
  const { client, sessionId } = state;
  if (client === null || sessionId === null) {
    setNotice("open a session first");
    return;
  }
  try {
    await client.propagate(sessionId, state.currentFrame);
    setNotice(`propagating from frame ${state.currentFrame}`);
  } catch (err) {
    setNotice(describeError(err));
  }
}

// ---------------------------------------------------------------------------
// rendering

function setCurrentFrame(index: number): void {
  if (index < 0 || index >= state.view.frameCount) return;
  state.currentFrame = index;
  state.editing = null;
  endStroke();
  render();
}

let overlayCanvas: HTMLCanvasElement | null = null;

function drawOverlay(ctx: CanvasRenderingContext2D, mask: LabelMap): void {
  if (overlayCanvas === null) overlayCanvas = document.createElement("canvas");
  overlayCanvas.width = mask.width;
  overlayCanvas.height = mask.height;
  const octx = overlayCanvas.getContext("2d")!;
  const pixels = overlayPixels(mask, state.editing === null ? 0.55 : 0.75);
  octx.putImageData(new ImageData(pixels, mask.width, mask.height), 0, 0);
  ctx.drawImage(overlayCanvas, 0, 0);
}

function renderViewer(): void {
  const size = state.frameSize ?? { width: 640, height: 360 };
  if (ui.viewer.width !== size.width || ui.viewer.height !== size.height) {
    ui.viewer.width = size.width;
    ui.viewer.height = size.height;
  }
  const ctx = ui.viewer.getContext("2d")!;
  const bitmap = state.frameBitmaps[state.currentFrame] ?? null;
  if (bitmap !== null) {
    ctx.drawImage(bitmap, 0, 0);
  } else {
    ctx.fillStyle = "#3a3a3a";
    ctx.fillRect(0, 0, size.width, size.height);
  }
  const mask = state.editing ?? state.view.masks.get(state.currentFrame);
  if (mask !== undefined && mask !== null) {
    drawOverlay(ctx, mask);
  }
}

function frameBadges(index: number): string {
  const badges: string[] = [];
  if (state.view.permanentFrames.has(index)) badges.push("pin");
  else if (state.view.referenceFrames.has(index)) badges.push("ref");
  if (state.view.masks.has(index) || state.view.pendingFetch.has(index)) {
    badges.push("mask");
  }
  return badges.join(" ");
}

function renderFilmstrip(): void {
  ui.filmstrip.replaceChildren();
  for (let i = 0; i < state.view.frameCount; i++) {
    const cell = document.createElement("button");
    cell.type = "button";
    cell.className = "frame-cell" + (i === state.currentFrame ? " current" : "");
    const badge = frameBadges(i);
    cell.textContent = badge === "" ? String(i) : `${i} [${badge}]`;
    cell.addEventListener("click", () => setCurrentFrame(i));
    ui.filmstrip.append(cell);
  }
}

function renderObjectButtons(): void {
  const labels: number[] = [0];
  const known = new Set(state.view.objectIds);
  for (let label = 1; label <= MAX_OBJECT_BUTTONS; label++) known.add(label);
  labels.push(...[...known].sort((a, b) => a - b));
  ui.objectButtons.replaceChildren();
  for (const label of labels) {
    const button = document.createElement("button");
    button.type = "button";
    button.className = "object-button" + (label === state.activeLabel ? " current" : "");
    button.textContent = label === 0 ? "erase" : `obj ${label}`;
    if (label !== 0) {
      button.style.borderColor = labelCss(label);
    }
    button.addEventListener("click", () => {
      state.activeLabel = label;
      render();
    });
    ui.objectButtons.append(button);
  }
}

function renderStatus(): void {
  const { view } = state;
  const parts: string[] = [];
  if (state.sessionId !== null) {
    parts.push(`session ${state.sessionId}`);
    const live = state.socket !== null && state.socket.readyState === WebSocket.OPEN;
    parts.push(live ? "events live" : "resyncing by polling");
    parts.push(`status ${view.status}`);
    if (view.status === "propagating") {
      parts.push(`frame ${view.progress} of ${view.frameCount - 1}`);
    }
    if (view.error !== "") parts.push(`error: ${view.error}`);
  } else {
    parts.push("no session");
  }
  if (state.notice !== "") parts.push(state.notice);
  ui.statusLine.textContent = parts.join(" | ");
  ui.frameLabel.textContent =
    `frame ${state.currentFrame}` + (state.editing !== null ? " (editing)" : "");
  ui.brushRadiusValue.textContent = ui.brushRadius.value;
}

function render(): void {
  renderStatus();
  renderViewer();
  renderFilmstrip();
  renderObjectButtons();
}

// ---------------------------------------------------------------------------
// wiring

export function start(): void {
  ui.openSession.addEventListener("click", () => void openSession());
  ui.attachSession.addEventListener("click", () => void attachSession());
  ui.commitMask.addEventListener("click", () => void commitMask());
  ui.clearEdit.addEventListener("click", () => {
    state.editing = null;
    endStroke();
    render();
  });
  ui.pinPermanent.addEventListener("click", () => void pinPermanent());
  ui.propagate.addEventListener("click", () => void propagate());
  ui.brushRadius.addEventListener("input", render);
  ui.viewer.addEventListener("pointerdown", beginStroke);
  ui.viewer.addEventListener("pointermove", continueStroke);
  ui.viewer.addEventListener("pointerup", endStroke);
  ui.viewer.addEventListener("pointercancel", endStroke);
  document.addEventListener("keydown", (evt) => {
    if (evt.target instanceof HTMLInputElement) return;
    if (evt.key === "ArrowRight") setCurrentFrame(state.currentFrame + 1);
    if (evt.key === "ArrowLeft") setCurrentFrame(state.currentFrame - 1);
  });
  render();
}

start();
