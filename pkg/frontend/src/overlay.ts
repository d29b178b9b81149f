/** Compositing of label maps into RGBA pixel buffers for canvas display. */

import { labelColor } from "./palette.js";
import type { LabelMap } from "./rle.js";

/** RGBA buffer with palette colors; background (label 0) is transparent. */
export function overlayPixels(map: LabelMap, alpha = 0.55): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(map.width * map.height * 4);
  const a = Math.round(alpha * 255);
  const cache = new Map<number, [number, number, number]>();
  for (let i = 0; i < map.data.length; i++) {
    const label = map.data[i];
    if (label === 0) continue;
    let rgb = cache.get(label);
    if (rgb === undefined) {
      rgb = labelColor(label & 0xff);
      cache.set(label, rgb);
    }
    out[i * 4] = rgb[0];
    out[i * 4 + 1] = rgb[1];
    out[i * 4 + 2] = rgb[2];
    out[i * 4 + 3] = a;
  }
  return out;
}
