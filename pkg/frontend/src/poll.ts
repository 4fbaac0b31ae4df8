// Polling loop: fixed interval while healthy, exponential backoff on errors.

export interface PollerOptions {
  intervalMs?: number;
  maxBackoffMs?: number;
  setTimeoutImpl?: (fn: () => void, ms: number) => unknown;
  clearTimeoutImpl?: (handle: unknown) => void;
}

export function backoffDelay(baseMs: number, consecutiveFailures: number, maxMs: number): number {
  if (consecutiveFailures <= 0) {
    return baseMs;
  }
  return Math.min(maxMs, baseMs * 2 ** consecutiveFailures);
}

export class Poller {
  private failures = 0;
  private handle: unknown = null;
  private stopped = true;
  private readonly intervalMs: number;
  private readonly maxBackoffMs: number;
  private readonly setT: (fn: () => void, ms: number) => unknown;
  private readonly clearT: (handle: unknown) => void;

  constructor(
    private readonly tick: () => Promise<void>,
    options: PollerOptions = {},
  ) {
    this.intervalMs = options.intervalMs ?? 3000;
    this.maxBackoffMs = options.maxBackoffMs ?? 60_000;
    this.setT = options.setTimeoutImpl ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearT = options.clearTimeoutImpl ?? ((h) => clearTimeout(h as number));
  }

  get consecutiveFailures(): number {
    return this.failures;
  }

  get nextDelayMs(): number {
    return backoffDelay(this.intervalMs, this.failures, this.maxBackoffMs);
  }

  start(): void {
    if (!this.stopped) {
      return;
    }
    this.stopped = false;
    void this.run();
  }

  stop(): void {
    this.stopped = true;
    if (this.handle !== null) {
      this.clearT(this.handle);
      this.handle = null;
    }
  }

  /** Run one tick immediately (used right after user actions). */
  async kick(): Promise<void> {
    await this.runOnce();
  }

  private async run(): Promise<void> {
    if (this.stopped) {
      return;
    }
    await this.runOnce();
  }

  private async runOnce(): Promise<void> {
    if (this.handle !== null) {
      this.clearT(this.handle);
      this.handle = null;
    }
    try {
      await this.tick();
      this.failures = 0;
    } catch {
      this.failures += 1;
    }
    if (!this.stopped) {
      this.handle = this.setT(() => void this.run(), this.nextDelayMs);
    }
  }
}
