/** Session view-model.
 *
 * Every field is derived from service responses: the event channel (which
 * replays its full log to each connection, so reloads rebuild the same
 * view), status snapshots used while the socket is down, and mask fetches.
 * The reducers are pure so playback state has a single, testable mutation
 * path; the socket consumer is the only caller while connected.
 */

import type { SessionEvent, SessionSnapshot, SessionStatus } from "./api.js";
import { decodeRle, type LabelMap } from "./rle.js";

export interface SessionView {
  frameCount: number;
  status: SessionStatus;
  /** Frame index of the latest streamed result, -1 before any propagation. */
  progress: number;
  /** Frames the current propagation run will compute, 0 when idle. */
  plannedTotal: number;
  error: string;
  /** Densely decoded masks, keyed by frame index. */
  masks: Map<number, LabelMap>;
  /** Frames whose masks exist on the service but not here yet. */
  pendingFetch: Set<number>;
  referenceFrames: Set<number>;
  permanentFrames: Set<number>;
  objectIds: number[];
  /** Highest event sequence number applied; replayed events are skipped. */
  lastSeq: number;
}

export function emptyView(frameCount = 0): SessionView {
  return {
    frameCount,
    status: "idle",
    progress: -1,
    plannedTotal: 0,
    error: "",
    masks: new Map(),
    pendingFetch: new Set(),
    referenceFrames: new Set(),
    permanentFrames: new Set(),
    objectIds: [],
    lastSeq: -1,
  };
}

function cloneView(view: SessionView): SessionView {
  return {
    ...view,
    masks: new Map(view.masks),
    pendingFetch: new Set(view.pendingFetch),
    referenceFrames: new Set(view.referenceFrames),
    permanentFrames: new Set(view.permanentFrames),
    objectIds: [...view.objectIds],
  };
}

function mergeObjectIds(view: SessionView, labels: LabelMap): void {
  const seen = new Set(view.objectIds);
  let grew = false;
  for (const value of labels.data) {
    if (value !== 0 && !seen.has(value)) {
      seen.add(value);
      grew = true;
    }
  }
  if (grew) {
    view.objectIds = [...seen].sort((a, b) => a - b);
  }
}

/** Fold one event-channel message into the view. */
export function applyEvent(view: SessionView, event: SessionEvent): SessionView {
  if (event.seq <= view.lastSeq) {
    return view; // replayed history after a reconnect
  }
  const next = cloneView(view);
  next.lastSeq = event.seq;
  switch (event.type) {
    case "mask_set":
      next.referenceFrames.add(event.frame_index);
      if (event.permanent) {
        next.permanentFrames.add(event.frame_index);
      } else {
        next.permanentFrames.delete(event.frame_index);
      }
      // The event does not carry pixels; the mask endpoint is authoritative.
      next.masks.delete(event.frame_index);
      next.pendingFetch.add(event.frame_index);
      break;
    case "start":
      next.status = "propagating";
      next.progress = event.from_index;
      next.plannedTotal = event.total;
      next.error = "";
      break;
    case "progress": {
      const labels = decodeRle(event.preview);
      next.masks.set(event.frame_index, labels);
      next.pendingFetch.delete(event.frame_index);
      next.progress = event.frame_index;
      mergeObjectIds(next, labels);
      break;
    }
    case "complete":
      next.status = "idle";
      break;
    case "error":
      next.status = "error";
      next.error = event.message;
      break;
  }
  return next;
}

/** Resync from a status snapshot (used while the event socket is down). */
export function applySnapshot(view: SessionView, snap: SessionSnapshot): SessionView {
  const next = cloneView(view);
  next.frameCount = snap.frame_count;
  next.status = snap.status;
  next.progress = snap.progress;
  next.error = snap.error;
  next.objectIds = [...snap.object_ids];
  next.referenceFrames = new Set(snap.reference_frames);
  // Permanence is only reported on the event channel; drop stale entries.
  for (const frame of next.permanentFrames) {
    if (!next.referenceFrames.has(frame)) {
      next.permanentFrames.delete(frame);
    }
  }
  for (const frame of snap.computed_frames) {
    if (!next.masks.has(frame)) {
      next.pendingFetch.add(frame);
    }
  }
  return next;
}

/** Record a mask fetched from the mask endpoint. */
export function resolveMask(
  view: SessionView,
  frameIndex: number,
  labels: LabelMap,
): SessionView {
  const next = cloneView(view);
  next.masks.set(frameIndex, labels);
  next.pendingFetch.delete(frameIndex);
  mergeObjectIds(next, labels);
  return next;
}

export function framesNeedingMasks(view: SessionView): number[] {
  return [...view.pendingFetch].sort((a, b) => a - b);
}
