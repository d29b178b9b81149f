/** Run-length codec for label maps.
 *
 * Propagation progress events carry each freshly computed mask as a
 * row-major run-length payload: `shape` is [height, width], and `values`
 * and `lengths` describe consecutive runs that must cover the map exactly.
 */

export interface RlePayload {
  shape: number[];
  values: number[];
  lengths: number[];
}

/** A dense 2-D label raster, row-major. */
export interface LabelMap {
  width: number;
  height: number;
  data: Int32Array;
}

export function createLabelMap(width: number, height: number): LabelMap {
  if (width <= 0 || height <= 0) {
    throw new Error(`label map dimensions must be positive, got ${width}x${height}`);
  }
  return { width, height, data: new Int32Array(width * height) };
}

export function cloneLabelMap(map: LabelMap): LabelMap {
  return { width: map.width, height: map.height, data: map.data.slice() };
}

export function decodeRle(payload: RlePayload): LabelMap {
  if (payload.shape.length !== 2) {
    throw new Error(`run-length shape must be [height, width], got ${payload.shape}`);
  }
  const [height, width] = payload.shape;
  if (payload.values.length !== payload.lengths.length) {
    throw new Error(
      `run-length values (${payload.values.length}) and lengths ` +
      `(${payload.lengths.length}) disagree`);
  }
  const data = new Int32Array(height * width);
  let at = 0;
  for (let i = 0; i < payload.values.length; i++) {
    const run = payload.lengths[i];
    if (!Number.isInteger(run) || run <= 0) {
      throw new Error(`run lengths must be positive integers, got ${run}`);
    }
    if (at + run > data.length) {
      throw new Error("run-length data overflows the stated shape");
    }
    data.fill(payload.values[i], at, at + run);
    at += run;
  }
  if (at !== data.length) {
    throw new Error(`runs cover ${at} pixels but the shape holds ${data.length}`);
  }
  return { width, height, data };
}

export function encodeRle(map: LabelMap): RlePayload {
  const values: number[] = [];
  const lengths: number[] = [];
  const n = map.data.length;
  let start = 0;
  for (let i = 1; i <= n; i++) {
    if (i === n || map.data[i] !== map.data[start]) {
      values.push(map.data[start]);
      lengths.push(i - start);
      start = i;
    }
  }
  return { shape: [map.height, map.width], values, lengths };
}

export function labelMapsEqual(a: LabelMap, b: LabelMap): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  for (let i = 0; i < a.data.length; i++) {
    if (a.data[i] !== b.data[i]) return false;
  }
  return true;
}
