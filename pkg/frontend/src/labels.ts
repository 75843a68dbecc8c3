/** Image-resolution label buffers for the region workflow.
 *
 * The buffer holds one uint8 label per pixel. Painting happens here at full
 * resolution; the service owns the reduction to feature resolution, so what
 * the brush produces is exactly what gets sent.
 */

export interface LabelBuffer {
  data: Uint8Array;
  width: number;
  height: number;
}

export function createLabelBuffer(width: number, height: number, fill = 0): LabelBuffer {
  const data = new Uint8Array(width * height);
  data.fill(fill);
  return { data, width, height };
}

export function uniqueLabels(buf: LabelBuffer): number[] {
  const seen = new Set<number>();
  for (const v of buf.data) seen.add(v);
  return [...seen].sort((a, b) => a - b);
}

/** Paint a filled disc of `label`, clipped to the buffer. */
export function paintDisc(
  buf: LabelBuffer,
  cx: number,
  cy: number,
  radius: number,
  label: number,
): void {
  const r2 = radius * radius;
  const x0 = Math.max(0, Math.floor(cx - radius));
  const x1 = Math.min(buf.width - 1, Math.ceil(cx + radius));
  const y0 = Math.max(0, Math.floor(cy - radius));
  const y1 = Math.min(buf.height - 1, Math.ceil(cy + radius));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r2) buf.data[y * buf.width + x] = label;
    }
  }
}

export function fillAll(buf: LabelBuffer, label: number): void {
  buf.data.fill(label);
}

/** Distinct overlay colors per label (labels are small integers). */
export function labelColor(label: number): [number, number, number] {
  const palette: [number, number, number][] = [
    [230, 60, 60],
    [60, 130, 230],
    [60, 200, 120],
    [235, 190, 50],
    [170, 90, 220],
    [240, 130, 40],
    [90, 210, 210],
    [200, 200, 200],
  ];
  return palette[label % palette.length];
}
