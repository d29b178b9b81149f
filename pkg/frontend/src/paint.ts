/** Brush editing of label rasters.
 *
 * Strokes are polylines in frame pixel coordinates; each segment is swept
 * with a disk stamp so fast mouse moves leave no gaps. Painting label 0 is
 * the eraser: it returns pixels to background.
 */

import type { LabelMap } from "./rle.js";

export interface StrokePoint {
  x: number;
  y: number;
}

/** Stamp a filled disk of `label` centered on (cx, cy). */
export function stampDisk(
  map: LabelMap,
  cx: number,
  cy: number,
  radius: number,
  label: number,
): void {
  const r = Math.max(0, radius);
  const x0 = Math.max(0, Math.ceil(cx - r));
  const x1 = Math.min(map.width - 1, Math.floor(cx + r));
  const y0 = Math.max(0, Math.ceil(cy - r));
  const y1 = Math.min(map.height - 1, Math.floor(cy + r));
  const rsq = r * r;
  for (let y = y0; y <= y1; y++) {
    const dy = y - cy;
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      if (dx * dx + dy * dy <= rsq) {
        map.data[y * map.width + x] = label;
      }
    }
  }
}

/** Sweep a disk along a segment, stamping at sub-pixel spacing. */
export function stampLine(
  map: LabelMap,
  x0: number,
  y0: number,
  x1: number,
  y1: number,
  radius: number,
  label: number,
): void {
  const length = Math.hypot(x1 - x0, y1 - y0);
  const steps = Math.max(1, Math.ceil(length * 2));
  for (let i = 0; i <= steps; i++) {
    const t = i / steps;
    stampDisk(map, x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius, label);
  }
}

/** Apply a whole stroke (single dab or connected polyline). */
export function applyStroke(
  map: LabelMap,
  points: StrokePoint[],
  radius: number,
  label: number,
): void {
  if (points.length === 0) return;
  if (points.length === 1) {
    stampDisk(map, points[0].x, points[0].y, radius, label);
    return;
  }
  for (let i = 1; i < points.length; i++) {
    stampLine(map, points[i - 1].x, points[i - 1].y,
              points[i].x, points[i].y, radius, label);
  }
}
