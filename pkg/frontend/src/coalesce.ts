/**
 * Latest-wins render scheduling.
 *
 * Invariants the studio relies on:
 *  - at most one render request is in flight at any time;
 *  - preview requests are rate-limited to one per `intervalMs`;
 *  - a response is displayed only if no newer response has been shown
 *    (stale frames are discarded, never flashed out of order);
 *  - a full-quality flush cancels any in-flight preview and jumps the
 *    rate limiter, so releasing a drag always renders promptly.
 */

export interface RenderLoopOptions<Req, Res> {
  post: (req: Req, signal: AbortSignal) => Promise<Res>;
  display: (res: Res) => void;
  onError?: (err: unknown) => void;
  /** Minimum spacing between issued preview requests (default 100 ms = 10 req/s). */
  intervalMs?: number;
}

export interface RenderLoopStats {
  issued: number;
  displayed: number;
  discarded: number;
}

function isAbort(err: unknown): boolean {
  return err instanceof Error && err.name === "AbortError";
}

export class RenderLoop<Req, Res> {
  private readonly post: (req: Req, signal: AbortSignal) => Promise<Res>;
  private readonly show: (res: Res) => void;
  private readonly onError: (err: unknown) => void;
  private readonly intervalMs: number;

  private latest: Req | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private controller: AbortController | null = null;
  private seq = 0;
  private shownSeq = 0;
  private lastIssueAt = -Infinity;
  private disposed = false;

  readonly stats: RenderLoopStats = { issued: 0, displayed: 0, discarded: 0 };

  constructor(opts: RenderLoopOptions<Req, Res>) {
    this.post = opts.post;
    this.show = opts.display;
    this.onError = opts.onError ?? (() => {});
    this.intervalMs = opts.intervalMs ?? 100;
  }

  get inflight(): boolean {
    return this.controller !== null;
  }

  /** Coalesced preview update; safe to call on every input event. */
  request(req: Req): void {
    if (this.disposed) return;
    this.latest = req;
    if (this.controller !== null || this.timer !== null) return;
    const wait = this.lastIssueAt + this.intervalMs - Date.now();
    if (wait <= 0) {
      this.issue();
    } else {
      this.timer = setTimeout(() => {
        this.timer = null;
        this.issue();
      }, wait);
    }
  }

  /** Immediate render (drag release / discrete action); preempts a preview. */
  flush(req: Req): void {
    if (this.disposed) return;
    this.latest = req;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.controller?.abort();
    this.controller = null;
    this.issue();
  }

  dispose(): void {
    this.disposed = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
    this.controller?.abort();
    this.controller = null;
    this.latest = null;
  }

  private issue(): void {
    if (this.latest === null) return;
    const req = this.latest;
    this.latest = null;
    const mySeq = ++this.seq;
    const controller = new AbortController();
    this.controller = controller;
    this.lastIssueAt = Date.now();
    this.stats.issued += 1;
    this.post(req, controller.signal).then(
      (res) => {
        if (this.controller === controller) this.controller = null;
        if (mySeq > this.shownSeq && !this.disposed) {
          this.shownSeq = mySeq;
          this.stats.displayed += 1;
          this.show(res);
        } else {
          this.stats.discarded += 1;
        }
        this.drain();
      },
      (err) => {
        if (this.controller === controller) this.controller = null;
        if (isAbort(err)) {
          this.stats.discarded += 1;
        } else if (!this.disposed) {
          this.onError(err);
        }
        this.drain();
      },
    );
  }

  /** After a completion, keep going if edits arrived mid-flight. */
  private drain(): void {
    if (this.disposed || this.latest === null || this.controller !== null) return;
    const req = this.latest;
    this.latest = null;
    this.request(req);
  }
}
