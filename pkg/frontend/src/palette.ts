/** Deterministic label colors.
 *
 * The mapping distributes each label's bits over the red/green/blue bit
 * planes, which is the same table the service uses when it writes indexed
 * mask PNGs. Keeping the two in sync means the overlay colors in the UI are
 * exactly the colors of the exported files.
 */

export function labelColor(label: number): [number, number, number] {
  if (!Number.isInteger(label) || label < 0 || label > 255) {
    throw new Error(`label out of range for the color table: ${label}`);
  }
  let value = label;
  let r = 0;
  let g = 0;
  let b = 0;
  for (let shift = 0; shift < 8; shift++) {
    r |= (value & 1) << (7 - shift);
    g |= ((value >> 1) & 1) << (7 - shift);
    b |= ((value >> 2) & 1) << (7 - shift);
    value >>= 3;
  }
  return [r, g, b];
}

/** Full color table as a flat [n * 3] RGB byte array, label 0 first. */
export function labelPalette(n = 256): Uint8Array {
  const pal = new Uint8Array(n * 3);
  for (let label = 0; label < n; label++) {
    const [r, g, b] = labelColor(label);
    pal[label * 3] = r;
    pal[label * 3 + 1] = g;
    pal[label * 3 + 2] = b;
  }
  return pal;
}

/** CSS color string for a label, for toolbar swatches and badges. */
export function labelCss(label: number): string {
  const [r, g, b] = labelColor(label);
  return `rgb(${r}, ${g}, ${b})`;
}
