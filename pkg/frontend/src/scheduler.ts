/** Debounced preview requests with stale-response discard.
 *
 * Slider drags fire many state changes; the scheduler coalesces them into at
 * most one request per debounce window and tags every request with a
 * monotonic sequence number. A response only lands if no newer request has
 * been issued since, so a slow early response can never overwrite a newer
 * preview.
 */

export interface SchedulerCallbacks<T> {
  onResult: (result: T) => void;
  onError: (err: unknown) => void;
}

export class PreviewScheduler<V, T> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pendingVars: V | null = null;
  private issuedSeq = 0;
  private appliedSeq = 0;

  constructor(
    private readonly fetchPreview: (vars: V) => Promise<T>,
    private readonly callbacks: SchedulerCallbacks<T>,
    readonly debounceMs = 150,
  ) {}

  /** Schedule a preview for the latest vars; restarts the debounce window. */
  request(vars: V): void {
    this.pendingVars = vars;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.fire();
    }, this.debounceMs);
  }

  /** Issue immediately, bypassing the debounce window (explicit actions). */
  requestNow(vars: V): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.pendingVars = vars;
    this.fire();
  }

  private fire(): void {
    const vars = this.pendingVars;
    if (vars === null) return;
    this.pendingVars = null;
    const seq = ++this.issuedSeq;
    this.fetchPreview(vars).then(
      (result) => {
        if (seq !== this.issuedSeq || seq <= this.appliedSeq) return; // stale
        this.appliedSeq = seq;
        this.callbacks.onResult(result);
      },
      (err) => {
        if (seq !== this.issuedSeq || seq <= this.appliedSeq) return; // stale
        this.appliedSeq = seq;
        this.callbacks.onError(err);
      },
    );
  }

  get inFlightSeq(): number {
    return this.issuedSeq;
  }
}
