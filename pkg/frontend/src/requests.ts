/** Debounced what-if loop with stale-response dropping.
 *
 * Each control change schedules one request after the debounce window;
 * responses carry sequence numbers and only the newest ever applies, so a
 * slow early answer can never overwrite a fresh one. At most `maxInFlight`
 * requests run concurrently; beyond that the newest request waits for a
 * slot (intermediate ones collapse into it). */

export class RequestLoop<Req, Resp> {
  private seq = 0;
  private applied = 0;
  private inFlight = 0;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pending: Req | null = null;

  constructor(
    private send: (req: Req) => Promise<Resp>,
    private apply: (resp: Resp, req: Req) => void,
    private debounceMs = 150,
    private maxInFlight = 4,
    private onError: (err: unknown) => void = () => {},
  ) {}

  /** Schedule a request; collapses bursts into the latest value. */
  request(req: Req): void {
    this.pending = req;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.flush();
    }, this.debounceMs);
  }

  /** Issue the pending request immediately (used by tests and init). */
  flush(): void {
    if (this.pending === null) return;
    if (this.inFlight >= this.maxInFlight) return; // retried when a slot frees
    const req = this.pending;
    this.pending = null;
    const mySeq = ++this.seq;
    this.inFlight++;
    this.send(req)
      .then((resp) => {
        if (mySeq > this.applied) {
          this.applied = mySeq;
          this.apply(resp, req);
        }
      })
      .catch((err) => this.onError(err))
      .finally(() => {
        this.inFlight--;
        if (this.pending !== null) this.flush();
      });
  }

  get inFlightCount(): number {
    return this.inFlight;
  }
}
