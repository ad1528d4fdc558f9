/**
 * Server-authoritative countdown with client-side interpolation.
 *
 * The server's remaining time is adopted on every sync, but never upward
 * within one game: timing semantics live in the engine, and a transient
 * larger server value (stale response, transport jitter) must not make the
 * timer jump back up. A new game resets the clamp.
 */
export class Countdown {
  private remainingAtSync = 0;
  private syncedAtMs = 0;
  private running = false;

  constructor(private readonly nowMs: () => number = () => Date.now()) {}

  /** Start a fresh game's countdown; the new value may exceed the old one. */
  reset(serverRemainingS: number): void {
    this.remainingAtSync = Math.max(0, serverRemainingS);
    this.syncedAtMs = this.nowMs();
    this.running = true;
  }

  /**
   * Adopt a server-reported remaining time for the current game, corrected
   * for transport delay. Values above the interpolated remaining time are
   * clamped so the display never increases.
   */
  sync(serverRemainingS: number, transportDelayS = 0): void {
    if (!this.running) {
      this.reset(serverRemainingS - transportDelayS);
      return;
    }
    const corrected = Math.max(0, serverRemainingS - transportDelayS);
    this.remainingAtSync = Math.min(this.value(), corrected);
    this.syncedAtMs = this.nowMs();
  }

  /** Interpolated remaining seconds, clamped at zero. */
  value(): number {
    if (!this.running) {
      return 0;
    }
    const elapsedS = (this.nowMs() - this.syncedAtMs) / 1000;
    return Math.max(0, this.remainingAtSync - elapsedS);
  }

  get expired(): boolean {
    return this.running && this.value() <= 0;
  }

  stop(): void {
    this.running = false;
  }
}

export function formatRemaining(seconds: number): string {
  const whole = Math.max(0, Math.ceil(seconds));
  const mins = Math.floor(whole / 60);
  const secs = whole % 60;
  return `${mins}:${secs.toString().padStart(2, '0')}`;
}
