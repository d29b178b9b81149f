import type { LabelMap } from "../src/rle.js";

/** Small deterministic PRNG so property-style tests are reproducible. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randomLabelMap(
  rand: () => number,
  width: number,
  height: number,
  maxLabel = 4,
): LabelMap {
  const data = new Int32Array(width * height);
  for (let i = 0; i < data.length; i++) {
    data[i] = Math.floor(rand() * (maxLabel + 1));
  }
  return { width, height, data };
}

export function base64Bytes(b64: string): Uint8Array {
  return Uint8Array.from(atob(b64), (ch) => ch.charCodeAt(0));
}
