/**
 * Outbound rate limiting: the command slider can move every pointer event,
 * but the wire sees at most `maxHz` messages per second. The newest value
 * always wins — a trailing send flushes whatever the slider settled on.
 */

export class RateLimiter<T> {
  private lastSent = -Infinity;
  private pending: T | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly maxHz: number,
    private readonly emit: (value: T) => void,
    private readonly now: () => number = () => Date.now(),
  ) {}

  get minIntervalMs(): number {
    return 1000 / this.maxHz;
  }

  push(value: T): void {
    const t = this.now();
    if (t - this.lastSent >= this.minIntervalMs) {
      this.lastSent = t;
      this.emit(value);
      return;
    }
    this.pending = value;
    if (this.timer === null) {
      const wait = this.minIntervalMs - (t - this.lastSent);
      this.timer = setTimeout(() => this.flush(), wait);
    }
  }

  flush(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    if (this.pending !== null) {
      this.lastSent = this.now();
      this.emit(this.pending);
      this.pending = null;
    }
  }
}
