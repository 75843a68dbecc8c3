/** Session state helpers: weight normalization and region-assignment gating.
 *
 * The client never sends weights the service would reject: sliders are
 * renormalized to sum 1 (mirroring the service's own normalization), and a
 * region preview is blocked until every painted label has a style.
 */

export type Weights = Record<string, number>;

/** Renormalize raw slider values to sum 1; null if they sum to ~zero. */
export function normalizeWeights(raw: Weights): Weights | null {
  const entries = Object.entries(raw);
  if (entries.length === 0) return null;
  const total = entries.reduce((acc, [, w]) => acc + w, 0);
  if (Math.abs(total) < 1e-9) return null;
  const out: Weights = {};
  for (const [name, w] of entries) out[name] = w / total;
  return out;
}

/** Labels present in a map that still lack a style assignment. */
export function missingAssignments(
  present: Iterable<number>,
  assignment: Map<number, string>,
): number[] {
  const missing: number[] = [];
  for (const label of present) {
    const style = assignment.get(label);
    if (!style) missing.push(label);
  }
  return missing.sort((a, b) => a - b);
}

export function assignmentComplete(
  present: Iterable<number>,
  assignment: Map<number, string>,
): boolean {
  return missingAssignments(present, assignment).length === 0;
}

export type Mode = "linear" | "region";

export interface SessionState {
  image: string | null; // base64 PNG of the uploaded image
  imageWidth: number;
  imageHeight: number;
  styles: string[];
  weights: Weights;
  mode: Mode;
  labels: Uint8Array | null; // image-resolution label map
  assignment: Map<number, string>;
  preview: string | null; // base64 PNG of the latest preview
  overlayVisible: boolean;
}

export function initialState(): SessionState {
  return {
    image: null,
    imageWidth: 0,
    imageHeight: 0,
    styles: [],
    weights: {},
    mode: "linear",
    labels: null,
    assignment: new Map(),
    preview: null,
    overlayVisible: true,
  };
}

/** Equal weight on every style; the starting slider position. */
export function defaultWeights(styles: string[]): Weights {
  const out: Weights = {};
  for (const name of styles) out[name] = 1 / Math.max(styles.length, 1);
  return out;
}
