/** Minimal PNG codec for label masks.
 *
 * The mask endpoints exchange indexed or 8-bit grayscale PNGs, which canvas
 * APIs cannot produce (toBlob always yields truecolor). Encoding is
 * therefore done by hand: one byte per pixel, filter 0 scanlines, zlib
 * compression via CompressionStream. The decoder handles the indexed and
 * grayscale files the service emits, including all five scanline filters,
 * and reports the palette index (not the display color) as the label.
 */

import type { LabelMap } from "./rle.js";

const SIGNATURE = new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10]);

let crcTable: Uint32Array | null = null;

function crc32(bytes: Uint8Array): number {
  if (crcTable === null) {
    crcTable = new Uint32Array(256);
    for (let n = 0; n < 256; n++) {
      let c = n;
      for (let k = 0; k < 8; k++) {
        c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
      }
      crcTable[n] = c >>> 0;
    }
  }
  let crc = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    crc = crcTable[(crc ^ bytes[i]) & 0xff] ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

function concatBytes(parts: Uint8Array[]): Uint8Array<ArrayBuffer> {
  let total = 0;
  for (const part of parts) total += part.length;
  const out = new Uint8Array(total);
  let at = 0;
  for (const part of parts) {
    out.set(part, at);
    at += part.length;
  }
  return out;
}

async function throughStream(
  stream: CompressionStream | DecompressionStream,
  data: Uint8Array<ArrayBuffer>,
): Promise<Uint8Array<ArrayBuffer>> {
  const writer = stream.writable.getWriter();
  const writing = writer.write(data).then(() => writer.close());
  const parts: Uint8Array[] = [];
  const reader = stream.readable.getReader();
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    parts.push(value);
  }
  await writing;
  return concatBytes(parts);
}

// "deflate" selects the zlib-wrapped format, which is what IDAT stores.
function deflate(data: Uint8Array<ArrayBuffer>): Promise<Uint8Array<ArrayBuffer>> {
  return throughStream(new CompressionStream("deflate"), data);
}

function inflate(data: Uint8Array<ArrayBuffer>): Promise<Uint8Array<ArrayBuffer>> {
  return throughStream(new DecompressionStream("deflate"), data);
}

function makeChunk(type: string, body: Uint8Array): Uint8Array {
  const chunk = new Uint8Array(12 + body.length);
  const view = new DataView(chunk.buffer);
  view.setUint32(0, body.length);
  for (let i = 0; i < 4; i++) chunk[4 + i] = type.charCodeAt(i);
  chunk.set(body, 8);
  view.setUint32(8 + body.length, crc32(chunk.subarray(4, 8 + body.length)));
  return chunk;
}

/** Encode a label map as an 8-bit grayscale PNG (labels 0..255). */
export async function encodeMaskPng(map: LabelMap): Promise<Uint8Array> {
  const { width, height, data } = map;
  if (data.length !== width * height) {
    throw new Error("label map data does not match its dimensions");
  }
  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    const row = y * (width + 1);
    raw[row] = 0; // filter: none
    for (let x = 0; x < width; x++) {
      const label = data[y * width + x];
      if (!Number.isInteger(label) || label < 0 || label > 255) {
        throw new Error(`labels must be integers in [0, 255], got ${label}`);
      }
      raw[row + 1 + x] = label;
    }
  }
  const header = new Uint8Array(13);
  const view = new DataView(header.buffer);
  view.setUint32(0, width);
  view.setUint32(4, height);
  header[8] = 8; // bit depth
  header[9] = 0; // color type: grayscale
  const idat = await deflate(raw);
  return concatBytes([
    SIGNATURE,
    makeChunk("IHDR", header),
    makeChunk("IDAT", idat),
    makeChunk("IEND", new Uint8Array(0)),
  ]);
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

/** Decode an indexed or 8-bit grayscale PNG into a label map. */
export async function decodeMaskPng(bytes: Uint8Array): Promise<LabelMap> {
  if (bytes.length < SIGNATURE.length ||
      !SIGNATURE.every((b, i) => bytes[i] === b)) {
    throw new Error("not a PNG file");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let width = 0;
  let height = 0;
  let colorType = -1;
  const idatParts: Uint8Array[] = [];
  let at = SIGNATURE.length;
  while (at + 8 <= bytes.length) {
    const length = view.getUint32(at);
    const type = String.fromCharCode(
      bytes[at + 4], bytes[at + 5], bytes[at + 6], bytes[at + 7]);
    const body = bytes.subarray(at + 8, at + 8 + length);
    if (type === "IHDR") {
      width = view.getUint32(at + 8);
      height = view.getUint32(at + 12);
      const bitDepth = bytes[at + 16];
      colorType = bytes[at + 17];
      const interlace = bytes[at + 20];
      if (bitDepth !== 8) {
        throw new Error(`mask PNGs must use bit depth 8, got ${bitDepth}`);
      }
      if (colorType !== 0 && colorType !== 3) {
        throw new Error(
          `mask PNGs must be grayscale or indexed, got color type ${colorType}`);
      }
      if (interlace !== 0) {
        throw new Error("interlaced PNGs are not supported");
      }
    } else if (type === "IDAT") {
      idatParts.push(body);
    } else if (type === "IEND") {
      break;
    }
    at += 12 + length;
  }
  if (colorType === -1 || width === 0 || height === 0) {
    throw new Error("PNG is missing a valid header");
  }
  const raw = await inflate(concatBytes(idatParts));
  const stride = width + 1;
  if (raw.length < height * stride) {
    throw new Error("PNG pixel data is truncated");
  }
  const data = new Int32Array(width * height);
  const prior = new Uint8Array(width);
  const recon = new Uint8Array(width);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * stride];
    const line = raw.subarray(y * stride + 1, y * stride + 1 + width);
    for (let x = 0; x < width; x++) {
      const left = x > 0 ? recon[x - 1] : 0;
      const up = prior[x];
      const upLeft = x > 0 ? prior[x - 1] : 0;
      let value = line[x];
      switch (filter) {
        case 0:
          break;
        case 1:
          value += left;
          break;
        case 2:
          value += up;
          break;
        case 3:
          value += (left + up) >> 1;
          break;
        case 4:
          value += paeth(left, up, upLeft);
          break;
        default:
          throw new Error(`unknown PNG scanline filter ${filter}`);
      }
      recon[x] = value & 0xff;
      data[y * width + x] = recon[x];
    }
    prior.set(recon);
  }
  return { width, height, data };
}
